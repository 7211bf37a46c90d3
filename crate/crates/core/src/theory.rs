//! Closed-form one-mode equilibria, the Landau expansion of the reduced
//! loss, a brute-force minimizer of that loss, and multi-mode predictions for
//! Gaussian data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::ScanGrid;
use crate::spectra::DataSpectrum;

/// Equilibrium of an isolated mode at reduced temperature `τ = βσ²_dec/λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneModeSolution {
    pub tau: f64,
    pub signal_fraction: f64,
    pub var_mean: f64,
    pub scale: f64,
    pub rate: f64,
    /// `D / D₀` with `D₀ = λ / (2σ²_dec)`.
    pub distortion_ratio: f64,
    pub collapsed: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && !tau.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// Canonical branch for `τ < 1` (`M² = 1 − τ`, `σ̄² = τ`, `A² = 1`,
/// `R = ½ log 1/τ`, `D/D₀ = τ`); collapsed branch otherwise.
pub fn one_mode_solution(tau: f64) -> Result<OneModeSolution> {
    check_tau(tau)?;
    Ok(if tau < 1.0 {
        OneModeSolution {
            tau,
            signal_fraction: 1.0 - tau,
            var_mean: tau,
            scale: 1.0,
            rate: -0.5 * tau.ln(),
            distortion_ratio: tau,
            collapsed: false,
        }
    } else {
        OneModeSolution {
            tau,
            signal_fraction: 0.0,
            var_mean: 1.0,
            scale: 1.0,
            rate: 0.0,
            distortion_ratio: 1.0,
            collapsed: true,
        }
    })
}

/// Coefficients of `M²` and `(M²)²` in the expansion of the reduced loss
/// about the collapsed branch: `(τ − 1, τ/2)`.
pub fn landau_coefficients(tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    Ok((tau - 1.0, 0.5 * tau))
}

/// Decoder-eliminated one-mode loss in units of `D₀`:
/// `(1 − M²) + τ [A² − log A² − log(1 − M²) − 1]`.
pub fn reduced_loss(m2: f64, a2: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(0.0..1.0).contains(&m2) {
        return Err(Error::LogDomainError(m2));
    }
    if !(a2 > 0.0) {
        return Err(Error::InvalidConfig(format!("latent scale must be positive, got {a2}")));
    }
    Ok((1.0 - m2) + tau * (a2 - a2.ln() - (1.0 - m2).ln() - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceMinimum {
    pub m2: f64,
    pub a2: f64,
    pub value: f64,
}

const M2_UPPER: f64 = 1.0 - 1e-6;
const A2_RANGE: (f64, f64) = (0.1, 10.0);
const GOLDEN_TOL: f64 = 1e-10;

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    // the bracket endpoints may beat the interior when the minimum sits on
    // the boundary
    [lo, 0.5 * (lo + hi), hi]
        .into_iter()
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("three candidates")
}

/// Grid search of [`reduced_loss`] over `M² ∈ [0, 1 − 10⁻⁶]`,
/// `A² ∈ [0.1, 10]`, followed by golden-section refinement of each
/// coordinate within its neighbouring grid cells.
pub fn one_mode_brute_force(tau: f64, resolution: usize) -> Result<BruteForceMinimum> {
    check_tau(tau)?;
    if resolution < 100 {
        return Err(Error::InvalidConfig(format!("grid resolution must be at least 100, got {resolution}")));
    }
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let loss = |m2: f64, a2: f64| reduced_loss(m2, a2, tau).expect("arguments inside the domain");

    let mut best = (0, 0, f64::INFINITY);
    for i in 0..resolution {
        let m2 = step(0.0, M2_UPPER, i);
        for j in 0..resolution {
            let a2 = step(A2_RANGE.0, A2_RANGE.1, j);
            let v = loss(m2, a2);
            if v < best.2 {
                best = (i, j, v);
            }
        }
    }
    let (i, j, _) = best;
    let m2_lo = step(0.0, M2_UPPER, i.saturating_sub(1));
    let m2_hi = step(0.0, M2_UPPER, (i + 1).min(resolution - 1));
    let a2_lo = step(A2_RANGE.0, A2_RANGE.1, j.saturating_sub(1));
    let a2_hi = step(A2_RANGE.0, A2_RANGE.1, (j + 1).min(resolution - 1));

    let mut a2 = step(A2_RANGE.0, A2_RANGE.1, j);
    let mut m2 = step(0.0, M2_UPPER, i);
    for _ in 0..2 {
        m2 = golden_section(m2_lo, m2_hi, |x| loss(x, a2));
        a2 = golden_section(a2_lo, a2_hi, |y| loss(m2, y));
    }
    Ok(BruteForceMinimum {
        m2,
        a2,
        value: loss(m2, a2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePrediction {
    /// 1-based rank in the PCA ordering.
    pub rank: usize,
    /// `λ_k / V`, the predicted threshold and utility.
    pub weight: f64,
    pub solution: OneModeSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub temperature: f64,
    pub beta: f64,
    pub modes: Vec<ModePrediction>,
    pub n_active: usize,
    /// `Σ_active T + Σ_collapsed λ_k/V`
    pub distortion: f64,
    /// `Σ_active ½ log((λ_k/V)/T)`
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPrediction {
    pub points: Vec<PredictionPoint>,
    /// `T_k = λ_k / V`
    pub thresholds: Vec<f64>,
    /// `β_{c,k} = λ_k / σ²_dec`
    pub beta_thresholds: Vec<f64>,
}

/// Equilibrium of `T = T_eval`, as independent one-mode problems along the
/// PCA eigendirections with `τ_k = T / (λ_k / V)`.
pub fn predict_point(spectrum: &DataSpectrum, temperature: f64, beta: f64) -> Result<PredictionPoint> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidGrid(format!("temperature must be positive, got {temperature}")));
    }
    let mut modes = Vec::with_capacity(spectrum.dim());
    let (mut distortion, mut rate, mut n_active) = (0.0, 0.0, 0);
    for (k, &weight) in spectrum.normalized_weights.iter().enumerate() {
        // zero-variance directions are collapsed at every T
        let tau = if weight > 0.0 { temperature / weight } else { f64::INFINITY };
        let solution = one_mode_solution(tau)?;
        distortion += weight * solution.distortion_ratio;
        rate += solution.rate;
        if !solution.collapsed {
            n_active += 1;
        }
        modes.push(ModePrediction {
            rank: k + 1,
            weight,
            solution,
        });
    }
    Ok(PredictionPoint {
        temperature,
        beta,
        modes,
        n_active,
        distortion,
        rate,
    })
}

pub fn predict_scan(spectrum: &DataSpectrum, grid: &ScanGrid) -> Result<ScanPrediction> {
    let points = grid
        .temperatures()
        .iter()
        .zip(grid.betas())
        .map(|(&t, beta)| predict_point(spectrum, t, beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanPrediction {
        points,
        thresholds: spectrum.normalized_weights.clone(),
        beta_thresholds: spectrum.eigenvalues.iter().map(|l| l / grid.dec_var()).collect(),
    })
}

/// One row of `prediction.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub temperature: f64,
    pub beta: f64,
    pub rank: usize,
    pub lambda_over_v: f64,
    pub tau: f64,
    pub signal_fraction: f64,
    pub var_mean: f64,
    pub rate: f64,
    pub total_distortion: f64,
    pub total_rate: f64,
    pub n_active: usize,
}

impl ScanPrediction {
    pub fn rows(&self) -> Vec<PredictionRow> {
        self.points
            .iter()
            .flat_map(|p| {
                p.modes.iter().map(move |m| PredictionRow {
                    temperature: p.temperature,
                    beta: p.beta,
                    rank: m.rank,
                    lambda_over_v: m.weight,
                    tau: m.solution.tau,
                    signal_fraction: m.solution.signal_fraction,
                    var_mean: m.solution.var_mean,
                    rate: m.solution.rate,
                    total_distortion: p.distortion,
                    total_rate: p.rate,
                    n_active: p.n_active,
                })
            })
            .collect()
    }
}
