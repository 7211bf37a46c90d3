//! Linear Gaussian VAE with a sampling-free objective.
//!
//! Encoder: `μ(x) = E x + b`, `log σ²(x) = G x + h` (clamped to ±30).
//! Decoder: `x̂(z) = W z + c` with fixed isotropic variance `σ²_dec`.
//!
//! Because the decoder is linear and the posterior Gaussian, the posterior
//! expectation of the squared error is exact:
//!
//! ```text
//! ⟨‖x − W z − c‖²⟩ = ‖x − W μ(x) − c‖² + Σ_j ‖W_{:,j}‖² σ_j²(x)
//! ```
//!
//! The mean path only needs the data mean and covariance; the log-variance
//! head is evaluated per sample because `exp` does not factor through
//! moments.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Clamp applied to every log-variance before exponentiation.
pub const LOGVAR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsDocument", try_from = "ParamsDocument")]
pub struct VaeParams {
    /// `m × d`
    pub enc_mean: Array2<f64>,
    pub enc_mean_bias: Array1<f64>,
    /// `m × d`
    pub enc_logvar: Array2<f64>,
    pub enc_logvar_bias: Array1<f64>,
    /// `d × m`
    pub dec: Array2<f64>,
    pub dec_bias: Array1<f64>,
    pub dec_var: f64,
}

impl VaeParams {
    /// The collapsed stationary point: zero maps, unit posterior variance and
    /// the decoder bias at `dec_bias`.
    pub fn collapsed(dec_bias: Array1<f64>, latent_dim: usize, dec_var: f64) -> Self {
        let d = dec_bias.len();
        Self {
            enc_mean: Array2::zeros((latent_dim, d)),
            enc_mean_bias: Array1::zeros(latent_dim),
            enc_logvar: Array2::zeros((latent_dim, d)),
            enc_logvar_bias: Array1::zeros(latent_dim),
            dec: Array2::zeros((d, latent_dim)),
            dec_bias,
            dec_var,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_mean.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_mean.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = self.enc_mean.dim();
        if m == 0 || d == 0 {
            return Err(Error::ShapeError("latent and input dimensions must be positive".into()));
        }
        let checks = [
            ("enc_logvar", self.enc_logvar.dim() == (m, d)),
            ("enc_mean_bias", self.enc_mean_bias.len() == m),
            ("enc_logvar_bias", self.enc_logvar_bias.len() == m),
            ("dec", self.dec.dim() == (d, m)),
            ("dec_bias", self.dec_bias.len() == d),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::ShapeError(format!("{name} inconsistent with m = {m}, d = {d}")));
        }
        if !(self.dec_var > 0.0 && self.dec_var.is_finite()) {
            return Err(Error::ShapeError(format!("decoder variance must be positive, got {}", self.dec_var)));
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::ShapeError("non-finite parameter entry".into()));
        }
        Ok(())
    }

    /// Trainable parameter blocks in a fixed order (the layout shared with
    /// [`ParamGrads`]).
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.enc_mean.as_slice().expect("standard layout"),
            self.enc_mean_bias.as_slice().expect("standard layout"),
            self.enc_logvar.as_slice().expect("standard layout"),
            self.enc_logvar_bias.as_slice().expect("standard layout"),
            self.dec.as_slice().expect("standard layout"),
            self.dec_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.enc_mean.as_slice_mut().expect("standard layout"),
            self.enc_mean_bias.as_slice_mut().expect("standard layout"),
            self.enc_logvar.as_slice_mut().expect("standard layout"),
            self.enc_logvar_bias.as_slice_mut().expect("standard layout"),
            self.dec.as_slice_mut().expect("standard layout"),
            self.dec_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn n_trainable(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Rescales latent `k`: `μ → sμ`, `σ² → s²σ²`, `W_{:,k} → W_{:,k}/s`.
    pub fn rescale_latent(&mut self, k: usize, s: f64) {
        self.enc_mean.row_mut(k).mapv_inplace(|v| v * s);
        self.enc_mean_bias[k] *= s;
        self.enc_logvar_bias[k] += 2.0 * s.ln();
        self.dec.column_mut(k).mapv_inplace(|v| v / s);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub const PARAM_BLOCK_NAMES: [&str; 6] = [
    "enc_mean",
    "enc_mean_bias",
    "enc_logvar",
    "enc_logvar_bias",
    "dec",
    "dec_bias",
];

/// Gradient of the total loss, laid out like [`VaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub enc_mean: Array2<f64>,
    pub enc_mean_bias: Array1<f64>,
    pub enc_logvar: Array2<f64>,
    pub enc_logvar_bias: Array1<f64>,
    pub dec: Array2<f64>,
    pub dec_bias: Array1<f64>,
}

impl ParamGrads {
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.enc_mean.as_slice().expect("standard layout"),
            self.enc_mean_bias.as_slice().expect("standard layout"),
            self.enc_logvar.as_slice().expect("standard layout"),
            self.enc_logvar_bias.as_slice().expect("standard layout"),
            self.dec.as_slice().expect("standard layout"),
            self.dec_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `D`, in likelihood units (nats, additive constant dropped).
    pub distortion_nats: f64,
    pub rate_nats: f64,
    /// `D + βR`
    pub total: f64,
    /// `D̃`: mean expected squared error over the total variance.
    pub distortion_normalized: f64,
    pub beta: f64,
    /// `T = β σ²_dec / V`
    pub temperature: f64,
}

/// Per-latent posterior statistics averaged over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeObservables {
    pub mu_sq: f64,
    pub var_mean: f64,
    pub logvar_mean: f64,
    pub rate: f64,
    pub signal_fraction: f64,
    pub scale: f64,
    pub jensen_gap: f64,
}

impl ModeObservables {
    fn from_moments(mu_sq: f64, var_mean: f64, logvar_mean: f64) -> Self {
        let scale = mu_sq + var_mean;
        Self {
            mu_sq,
            var_mean,
            logvar_mean,
            rate: 0.5 * (mu_sq + var_mean - logvar_mean - 1.0),
            signal_fraction: mu_sq / scale,
            scale,
            jensen_gap: var_mean.ln() - logvar_mean,
        }
    }

    pub fn snr(&self) -> f64 {
        self.mu_sq / self.var_mean
    }
}

/// Precomputed data moments for repeated evaluation on one dataset.
#[derive(Debug, Clone)]
pub struct Objective {
    centered: Array2<f64>,
    mean: Array1<f64>,
    cov: Array2<f64>,
    variance: f64,
}

/// Intermediate quantities shared by the loss, the gradients and the
/// observables.
struct Forward {
    /// `I − W E`
    a: Array2<f64>,
    /// `E x̄ + b`
    mu_bar: Array1<f64>,
    /// `x̄ − W μ̄ − c`
    r_bar: Array1<f64>,
    /// per-sample log-variances after clamping (`N × m`)
    logvar: Array2<f64>,
    var: Array2<f64>,
    var_mean: Array1<f64>,
    logvar_mean: Array1<f64>,
    mu_sq: Array1<f64>,
    dec_col_norm2: Array1<f64>,
    mean_sq_err: f64,
    noise_err: f64,
}

impl Objective {
    pub fn new(ds: &Dataset) -> Self {
        let mean = ds.mean();
        let centered = ds.samples() - &mean.view().insert_axis(Axis(0));
        let n = ds.n_samples() as f64;
        let mut cov = centered.t().dot(&centered) / n;
        let d = cov.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
                cov[[i, j]] = avg;
                cov[[j, i]] = avg;
            }
        }
        let variance = cov.diag().sum();
        Self {
            centered,
            mean,
            cov,
            variance,
        }
    }

    pub fn total_variance(&self) -> f64 {
        self.variance
    }

    pub fn n_samples(&self) -> usize {
        self.centered.nrows()
    }

    fn check(&self, p: &VaeParams) -> Result<()> {
        p.validate()?;
        if p.input_dim() != self.mean.len() {
            return Err(Error::ShapeError(format!(
                "model input dimension {} but data has {} features",
                p.input_dim(),
                self.mean.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, p: &VaeParams) -> Result<Forward> {
        self.check(p)?;
        let d = p.input_dim();
        let w = &p.dec;
        let e = &p.enc_mean;
        let a = Array2::<f64>::eye(d) - w.dot(e);
        let mu_bar = e.dot(&self.mean) + &p.enc_mean_bias;
        let r_bar = &self.mean - &w.dot(&mu_bar) - &p.dec_bias;

        // tr(A C Aᵀ) + ‖r̄‖²
        let ac = a.dot(&self.cov);
        let mean_sq_err = (&ac * &a).sum() + r_bar.dot(&r_bar);

        let ec = e.dot(&self.cov);
        let mu_sq = (&ec * e).sum_axis(Axis(1)) + &mu_bar.mapv(|v| v * v);

        let offset = p.enc_logvar.dot(&self.mean) + &p.enc_logvar_bias;
        let mut logvar = self.centered.dot(&p.enc_logvar.t());
        logvar += &offset.view().insert_axis(Axis(0));
        logvar.mapv_inplace(|u| u.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        let var = logvar.mapv(f64::exp);
        let var_mean = var.mean_axis(Axis(0)).expect("non-empty");
        let logvar_mean = logvar.mean_axis(Axis(0)).expect("non-empty");

        let dec_col_norm2 = w.mapv(|v| v * v).sum_axis(Axis(0));
        let noise_err = dec_col_norm2.dot(&var_mean);

        Ok(Forward {
            a,
            mu_bar,
            r_bar,
            logvar,
            var,
            var_mean,
            logvar_mean,
            mu_sq,
            dec_col_norm2,
            mean_sq_err,
            noise_err,
        })
    }

    /// Loss on this dataset, with `T` computed from `control_variance`
    /// (normally the training-set variance).
    pub fn loss_at(&self, p: &VaeParams, beta: f64, control_variance: f64) -> Result<LossBreakdown> {
        let f = self.forward(p)?;
        breakdown(&f, p, beta, self.variance, control_variance)
    }

    pub fn loss(&self, p: &VaeParams, beta: f64) -> Result<LossBreakdown> {
        self.loss_at(p, beta, self.variance)
    }

    pub fn loss_and_gradients(&self, p: &VaeParams, beta: f64) -> Result<(LossBreakdown, ParamGrads)> {
        let f = self.forward(p)?;
        let loss = breakdown(&f, p, beta, self.variance, self.variance)?;
        let inv_var = 1.0 / p.dec_var;
        let w = &p.dec;
        let e = &p.enc_mean;

        // mean path: g_μ(x) = −(1/σ²) Wᵀ r(x) + β μ(x) = P (x − x̄) + ḡ
        let proj = w.t().dot(&f.a) * (-inv_var) + &(e * beta);
        let g_bar = w.t().dot(&f.r_bar) * (-inv_var) + &(&f.mu_bar * beta);
        let outer = |u: &Array1<f64>, v: &Array1<f64>| {
            u.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)))
        };
        let enc_mean = proj.dot(&self.cov) + &outer(&g_bar, &self.mean);
        let enc_mean_bias = g_bar;

        // mean r(x) μ(x)ᵀ = A C Eᵀ + r̄ μ̄ᵀ
        let r_mu = f.a.dot(&self.cov).dot(&e.t()) + &outer(&f.r_bar, &f.mu_bar);
        let dec = (w * &f.var_mean.view().insert_axis(Axis(0)) - &r_mu) * inv_var;
        let dec_bias = &f.r_bar * (-inv_var);

        // log-variance head: ∂L/∂u_k = ‖W_k‖² s_k / (2σ²) + β (s_k − 1) / 2
        let coef = f.dec_col_norm2.mapv(|c| 0.5 * c * inv_var + 0.5 * beta);
        let mut g_u = f.var.clone();
        Zip::from(g_u.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&coef).for_each(|g, &c| *g = c * *g - 0.5 * beta);
        });
        Zip::from(&mut g_u).and(&f.logvar).for_each(|g, &u| {
            if u.abs() >= LOGVAR_CLAMP {
                // clamped: only exactly-at-bound values could still move, treat as flat
                *g = 0.0;
            }
        });
        let n = self.n_samples() as f64;
        let enc_logvar_bias = g_u.mean_axis(Axis(0)).expect("non-empty");
        let enc_logvar = g_u.t().dot(&self.centered) / n + &outer(&enc_logvar_bias, &self.mean);

        let grads = ParamGrads {
            enc_mean,
            enc_mean_bias,
            enc_logvar,
            enc_logvar_bias,
            dec,
            dec_bias,
        };
        for (name, block) in PARAM_BLOCK_NAMES.iter().zip(grads.blocks()) {
            if block.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient((*name).into()));
            }
        }
        Ok((loss, grads))
    }

    pub fn observables(&self, p: &VaeParams) -> Result<Vec<ModeObservables>> {
        let f = self.forward(p)?;
        Ok((0..p.latent_dim())
            .map(|k| ModeObservables::from_moments(f.mu_sq[k], f.var_mean[k], f.logvar_mean[k]))
            .collect())
    }

    /// Normalized squared error of the mean decode keeping only the latents
    /// in `keep`; the others are set to their prior mean.
    pub fn truncated_distortion(&self, p: &VaeParams, keep: &[usize]) -> Result<f64> {
        self.check(p)?;
        let m = p.latent_dim();
        let mut mask = Array1::<f64>::zeros(m);
        for &k in keep {
            if k >= m {
                return Err(Error::IndexError { index: k, m });
            }
            mask[k] = 1.0;
        }
        let e_kept = &p.enc_mean * &mask.view().insert_axis(Axis(1));
        let b_kept = &p.enc_mean_bias * &mask;
        let a = Array2::<f64>::eye(p.input_dim()) - p.dec.dot(&e_kept);
        let mu_bar = e_kept.dot(&self.mean) + &b_kept;
        let r_bar = &self.mean - &p.dec.dot(&mu_bar) - &p.dec_bias;
        let err = (&a.dot(&self.cov) * &a).sum() + r_bar.dot(&r_bar);
        Ok(err / self.variance)
    }
}

fn breakdown(
    f: &Forward,
    p: &VaeParams,
    beta: f64,
    variance: f64,
    control_variance: f64,
) -> Result<LossBreakdown> {
    let sq_err = f.mean_sq_err + f.noise_err;
    let distortion_nats = sq_err / (2.0 * p.dec_var);
    let rate_nats = 0.5 * (&f.mu_sq + &f.var_mean - &f.logvar_mean).sum() - 0.5 * p.latent_dim() as f64;
    let total = distortion_nats + beta * rate_nats;
    let terms = [
        ("reconstruction error", f.mean_sq_err),
        ("posterior noise", f.noise_err),
        ("rate", rate_nats),
        ("total", total),
    ];
    if let Some((name, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { term: (*name).into() });
    }
    Ok(LossBreakdown {
        distortion_nats,
        rate_nats,
        total,
        distortion_normalized: sq_err / variance,
        beta,
        temperature: beta * p.dec_var / control_variance,
    })
}

pub fn expected_loss(p: &VaeParams, ds: &Dataset, beta: f64) -> Result<LossBreakdown> {
    Objective::new(ds).loss(p, beta)
}

/// As [`expected_loss`], with `T` measured against `control_variance`.
pub fn expected_loss_at(p: &VaeParams, ds: &Dataset, beta: f64, control_variance: f64) -> Result<LossBreakdown> {
    Objective::new(ds).loss_at(p, beta, control_variance)
}

pub fn loss_gradients(p: &VaeParams, ds: &Dataset, beta: f64) -> Result<ParamGrads> {
    Objective::new(ds).loss_and_gradients(p, beta).map(|(_, g)| g)
}

pub fn posterior_observables(p: &VaeParams, ds: &Dataset) -> Result<Vec<ModeObservables>> {
    Objective::new(ds).observables(p)
}

pub fn reconstruct_truncated(p: &VaeParams, ds: &Dataset, keep: &[usize]) -> Result<f64> {
    Objective::new(ds).truncated_distortion(p, keep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDocument {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&Array2<f64>> for MatrixDocument {
    fn from(m: &Array2<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }
}

impl TryFrom<MatrixDocument> for Array2<f64> {
    type Error = String;

    fn try_from(doc: MatrixDocument) -> std::result::Result<Self, String> {
        Array2::from_shape_vec((doc.rows, doc.cols), doc.data)
            .map_err(|e| format!("matrix {}x{}: {e}", doc.rows, doc.cols))
    }
}

/// JSON layout of [`VaeParams`]: explicit shapes, row-major data.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsDocument {
    input_dim: usize,
    latent_dim: usize,
    dec_var: f64,
    enc_mean: MatrixDocument,
    enc_mean_bias: Vec<f64>,
    enc_logvar: MatrixDocument,
    enc_logvar_bias: Vec<f64>,
    dec: MatrixDocument,
    dec_bias: Vec<f64>,
}

impl From<VaeParams> for ParamsDocument {
    fn from(p: VaeParams) -> Self {
        Self {
            input_dim: p.input_dim(),
            latent_dim: p.latent_dim(),
            dec_var: p.dec_var,
            enc_mean: (&p.enc_mean).into(),
            enc_mean_bias: p.enc_mean_bias.to_vec(),
            enc_logvar: (&p.enc_logvar).into(),
            enc_logvar_bias: p.enc_logvar_bias.to_vec(),
            dec: (&p.dec).into(),
            dec_bias: p.dec_bias.to_vec(),
        }
    }
}

impl TryFrom<ParamsDocument> for VaeParams {
    type Error = String;

    fn try_from(doc: ParamsDocument) -> std::result::Result<Self, String> {
        let p = VaeParams {
            enc_mean: doc.enc_mean.try_into()?,
            enc_mean_bias: doc.enc_mean_bias.into(),
            enc_logvar: doc.enc_logvar.try_into()?,
            enc_logvar_bias: doc.enc_logvar_bias.into(),
            dec: doc.dec.try_into()?,
            dec_bias: doc.dec_bias.into(),
            dec_var: doc.dec_var,
        };
        if p.input_dim() != doc.input_dim || p.latent_dim() != doc.latent_dim {
            return Err("declared dimensions disagree with matrix shapes".into());
        }
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn random_params(d: usize, m: usize, scale: f64, rng: &mut ChaCha8Rng) -> VaeParams {
        let mut g = |shape: (usize, usize)| {
            Array2::<f64>::from_shape_fn(shape, |_| scale * { let z: f64 = StandardNormal.sample(&mut *rng); z })
        };
        let enc_mean = g((m, d));
        let enc_logvar = g((m, d));
        let dec = g((d, m));
        let biases = g((1, 2 * m + d));
        VaeParams {
            enc_mean,
            enc_mean_bias: biases.slice(ndarray::s![0, ..m]).to_owned(),
            enc_logvar,
            enc_logvar_bias: biases.slice(ndarray::s![0, m..2 * m]).to_owned(),
            dec,
            dec_bias: biases.slice(ndarray::s![0, 2 * m..]).to_owned(),
            dec_var: 0.7,
        }
    }

    /// One-mode data with exactly unit variance.
    fn unit_mode() -> Dataset {
        Dataset::from_samples(ndarray::arr2(&[[1.0], [-1.0]])).unwrap()
    }

    fn canonical_one_mode(tau: f64) -> VaeParams {
        // λ = 1: a² = 1 − τ, σ² = τ, w = a λ / A² = a
        let a = (1.0 - tau).sqrt();
        VaeParams {
            enc_mean: ndarray::arr2(&[[a]]),
            enc_mean_bias: ndarray::arr1(&[0.0]),
            enc_logvar: ndarray::arr2(&[[0.0]]),
            enc_logvar_bias: ndarray::arr1(&[tau.ln()]),
            dec: ndarray::arr2(&[[a]]),
            dec_bias: ndarray::arr1(&[0.0]),
            dec_var: 1.0,
        }
    }

    #[test]
    fn collapsed_params_have_unit_distortion_and_zero_rate() {
        let ds = generate_gaussian(&[2.0, 1.0, 0.5], 200, 3).unwrap();
        let p = VaeParams::collapsed(ds.mean(), 4, 1.0);
        let loss = expected_loss(&p, &ds, 0.3).unwrap();
        assert!((loss.distortion_normalized - 1.0).abs() < 1e-12);
        assert_eq!(loss.rate_nats, 0.0);
        for obs in posterior_observables(&p, &ds).unwrap() {
            assert_eq!(obs.signal_fraction, 0.0);
            assert_eq!(obs.scale, 1.0);
            assert_eq!(obs.jensen_gap, 0.0);
            assert_eq!(obs.rate, 0.0);
        }
        assert!((reconstruct_truncated(&p, &ds, &[]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_reconstruction_leaves_only_noise() {
        let ds = generate_gaussian(&[1.0, 0.5], 100, 1).unwrap();
        let mean = ds.mean();
        let mut p = VaeParams::collapsed(Array1::zeros(2), 2, 1.0);
        p.enc_mean = Array2::eye(2);
        p.dec = Array2::eye(2);
        p.enc_mean_bias = -&mean;
        p.dec_bias = mean;
        p.enc_logvar_bias.fill(-20.0);
        let loss = expected_loss(&p, &ds, 0.0).unwrap();
        let expected = 2.0 * (-20.0f64).exp() / ds.total_variance();
        assert!((loss.distortion_normalized - expected).abs() < 1e-15);
        assert!(reconstruct_truncated(&p, &ds, &[0, 1]).unwrap() < 1e-20);
    }

    #[test]
    fn canonical_one_mode_branch() {
        let ds = unit_mode();
        let p = canonical_one_mode(0.5);
        let loss = expected_loss(&p, &ds, 0.5).unwrap();
        // D₀ = λ / (2σ²) = 0.5
        assert!((loss.distortion_nats / 0.5 - 0.5).abs() < 1e-12);

        let p = canonical_one_mode(0.25);
        let obs = posterior_observables(&p, &ds).unwrap()[0];
        assert!((obs.signal_fraction - 0.75).abs() < 1e-12);
        assert!((obs.var_mean - 0.25).abs() < 1e-12);
        assert!((obs.scale - 1.0).abs() < 1e-12);
        assert!((obs.rate - 0.5 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn input_dependent_logvar_gives_positive_jensen_gap() {
        // two-point dataset x = ±1 with log σ² = x: mean σ² = cosh(1), mean log σ² = 0
        let ds = unit_mode();
        let mut p = canonical_one_mode(0.5);
        p.enc_logvar = ndarray::arr2(&[[1.0]]);
        p.enc_logvar_bias = ndarray::arr1(&[0.0]);
        let obs = posterior_observables(&p, &ds).unwrap()[0];
        let expected = 1.0f64.cosh().ln();
        assert!((obs.jensen_gap - expected).abs() < 1e-12);
        assert!(obs.jensen_gap > 0.0);
    }

    fn finite_difference_check(p: &VaeParams, ds: &Dataset, beta: f64) -> f64 {
        let obj = Objective::new(ds);
        let (_, grads) = obj.loss_and_gradients(p, beta).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for block in 0..6 {
            for i in 0..p.blocks()[block].len() {
                let mut plus = p.clone();
                plus.blocks_mut()[block][i] += h;
                let mut minus = p.clone();
                minus.blocks_mut()[block][i] -= h;
                let fd = (obj.loss(&plus, beta).unwrap().total - obj.loss(&minus, beta).unwrap().total) / (2.0 * h);
                let an = grads.blocks()[block][i];
                let err = (fd - an).abs();
                let rel = err / fd.abs().max(an.abs()).max(1e-300);
                worst = worst.max(if err <= 1e-9 { 0.0 } else { rel });
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let noise = Normal::new(0.0, 1.0).unwrap();
            let x = Array2::from_shape_fn((7, 3), |_| noise.sample(&mut rng) + 0.3);
            let ds = Dataset::from_samples(x).unwrap();
            let p = random_params(3, 2, 0.5, &mut rng);
            let worst = finite_difference_check(&p, &ds, 0.1 + trial as f64 * 0.4);
            assert!(worst < 1e-6, "trial {trial}: {worst}");
        }
    }

    #[test]
    fn zeroed_latent_has_stationary_logvar_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = generate_gaussian(&[1.0, 0.3, 0.1], 50, 2).unwrap();
        let mut p = random_params(3, 3, 0.3, &mut rng);
        p.enc_mean.row_mut(1).fill(0.0);
        p.enc_mean_bias[1] = 0.0;
        p.enc_logvar.row_mut(1).fill(0.0);
        p.enc_logvar_bias[1] = 0.0;
        p.dec.column_mut(1).fill(0.0);
        let g = loss_gradients(&p, &ds, 0.8).unwrap();
        assert_eq!(g.enc_logvar_bias[1], 0.0);
    }

    #[test]
    fn optimal_decoder_bias_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = generate_gaussian(&[1.0, 0.3], 40, 8).unwrap();
        let mut p = random_params(2, 3, 0.4, &mut rng);
        let mu_bar = p.enc_mean.dot(&ds.mean()) + &p.enc_mean_bias;
        p.dec_bias = ds.mean() - p.dec.dot(&mu_bar);
        let g = loss_gradients(&p, &ds, 0.5).unwrap();
        assert!(g.dec_bias.iter().all(|v| v.abs() < 1e-12), "{:?}", g.dec_bias);
    }

    #[test]
    fn shape_and_index_errors() {
        let ds = generate_gaussian(&[1.0, 0.5], 20, 0).unwrap();
        let p = VaeParams::collapsed(Array1::zeros(3), 2, 1.0);
        assert!(matches!(expected_loss(&p, &ds, 1.0), Err(Error::ShapeError(_))));
        let p = VaeParams::collapsed(Array1::zeros(2), 2, 1.0);
        assert!(matches!(reconstruct_truncated(&p, &ds, &[2]), Err(Error::IndexError { index: 2, m: 2 })));
    }

    #[test]
    fn huge_logvar_is_clamped_not_infinite() {
        let ds = unit_mode();
        let mut p = canonical_one_mode(0.5);
        p.enc_logvar_bias[0] = 1e6;
        let loss = expected_loss(&p, &ds, 1.0).unwrap();
        assert!(loss.total.is_finite());
        let obs = posterior_observables(&p, &ds).unwrap()[0];
        assert_eq!(obs.logvar_mean, LOGVAR_CLAMP);
    }

    #[test]
    fn json_roundtrip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(3, 2, 1.0, &mut rng);
        let text = p.to_json().unwrap();
        assert_eq!(VaeParams::from_json(&text).unwrap(), p);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["enc_mean"]["rows"], 2);
        assert_eq!(doc["enc_mean"]["cols"], 3);
        assert_eq!(doc["enc_mean"]["data"][1].as_f64().unwrap(), p.enc_mean[[0, 1]]);
        assert!(VaeParams::from_json(&text.replace("\"rows\": 2", "\"rows\": 5")).is_err());
    }
}
