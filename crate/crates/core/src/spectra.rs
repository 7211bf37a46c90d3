//! Covariance, a cyclic Jacobi symmetric eigensolver, and the PCA spectrum
//! whose normalized weights `λ_k / V` are both the predicted collapse
//! thresholds and the predicted reconstruction utilities.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_REL_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Population covariance `(1/N) Σ (x - x̄)(x - x̄)ᵀ`.
pub fn covariance(ds: &Dataset) -> Result<Array2<f64>> {
    let n = ds.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let centered = ds.samples() - &ds.mean().insert_axis(Axis(0));
    let mut c = centered.t().dot(&centered) / n as f64;
    symmetrize(&mut c);
    Ok(c)
}

fn symmetrize(m: &mut Array2<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Each eigenvector is signed so that its largest-magnitude
/// component is positive.
pub fn eigh_symmetric(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::ShapeError(format!("eigh needs a square matrix, got {rows}x{cols}")));
    }
    let d = rows;
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            asym = asym.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = m.clone();
    symmetrize(&mut a);
    let mut v = Array2::<f64>::eye(d);
    let threshold = JACOBI_REL_TOL * frobenius(&a);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = v.select(Axis(1), &order);
    for mut col in vectors.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    Ok((values, vectors))
}

/// Applies the Jacobi rotation zeroing `a[p][q]` to `a` (both sides) and
/// accumulates it into `v`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let d = a.nrows();
    let app = a[[p, p]];
    let aqq = a[[q, q]];
    let apq = a[[p, q]];
    for k in 0..d {
        if k == p || k == q {
            continue;
        }
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[[k, p]] = new_kp;
        a[[p, k]] = new_kp;
        a[[k, q]] = new_kq;
        a[[q, k]] = new_kq;
    }
    a[[p, p]] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[[q, q]] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[[p, q]] = 0.0;
    a[[q, p]] = 0.0;
    for k in 0..d {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

/// PCA spectrum of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpectrum {
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Columns aligned with `eigenvalues`.
    pub eigenvectors: Array2<f64>,
    pub total_variance: f64,
    /// `λ_k / V`, summing to one.
    pub normalized_weights: Vec<f64>,
}

impl DataSpectrum {
    /// Builds a spectrum from eigenvalues alone (axis-aligned eigenvectors).
    /// Used for theory-only predictions.
    pub fn from_eigenvalues(eigenvalues: &[f64]) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidSpectrum("eigenvalues must be finite and non-negative".into()));
        }
        let mut sorted = eigenvalues.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let eye = Array2::eye(sorted.len());
        Self::assemble(sorted, eye)
    }

    fn assemble(mut eigenvalues: Vec<f64>, eigenvectors: Array2<f64>) -> Result<Self> {
        let raw_total: f64 = eigenvalues.iter().sum();
        for l in eigenvalues.iter_mut() {
            if *l < 0.0 {
                // roundoff only; anything larger means the input was not PSD
                debug_assert!(*l >= -1e-10 * raw_total.abs().max(f64::MIN_POSITIVE));
                *l = 0.0;
            }
        }
        let total_variance: f64 = eigenvalues.iter().sum();
        if !(total_variance > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let normalized_weights = eigenvalues.iter().map(|l| l / total_variance).collect();
        Ok(Self {
            eigenvalues,
            eigenvectors,
            total_variance,
            normalized_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `1 - Σ_{j≤k} λ_j/V` for k = 0..=d: the distortion of a rank-k PCA
    /// reconstruction.
    pub fn cumulative_residual(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim() + 1);
        let mut acc = 1.0;
        out.push(acc);
        for w in &self.normalized_weights {
            acc -= w;
            out.push(acc.max(0.0));
        }
        out
    }

    /// Writes `spectrum.csv` (`rank,lambda,lambda_over_V`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<SpectrumRow> = self
            .eigenvalues
            .iter()
            .zip(&self.normalized_weights)
            .enumerate()
            .map(|(k, (&lambda, &lambda_over_v))| SpectrumRow {
                rank: k + 1,
                lambda,
                lambda_over_v,
            })
            .collect();
        crate::report::io::write_rows(path, &rows)
    }

    /// Reads a `spectrum.csv`; eigenvectors are not stored and come back as
    /// the identity.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows: Vec<SpectrumRow> = crate::report::io::read_rows(path)?;
        let eigenvalues: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        Self::from_eigenvalues(&eigenvalues)
    }
}

/// One row of `spectrum.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub rank: usize,
    pub lambda: f64,
    #[serde(rename = "lambda_over_V")]
    pub lambda_over_v: f64,
}

pub fn pca_spectrum(ds: &Dataset) -> Result<DataSpectrum> {
    let c = covariance(ds)?;
    let (values, vectors) = eigh_symmetric(&c)?;
    DataSpectrum::assemble(values, vectors)
}

/// Residual `max_k ‖A v_k − λ_k v_k‖`.
pub fn eigen_residual(m: &Array2<f64>, values: &[f64], vectors: &Array2<f64>) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let v = vectors.column(k);
            let r: Array1<f64> = m.dot(&v) - &v.mapv(|x| x * l);
            r.dot(&r).sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, random_orthogonal};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_symmetric(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::<f64>::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
        (&g + &g.t()) * 0.5
    }

    #[test]
    fn two_point_covariance() {
        let ds = Dataset::from_samples(ndarray::arr2(&[[-1.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_eq!(covariance(&ds).unwrap(), ndarray::arr2(&[[1.0, 0.0], [0.0, 0.0]]));
    }

    #[test]
    fn covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::<f64>::from_shape_fn((5, 3), |_| StandardNormal.sample(&mut rng));
        let ds = Dataset::from_samples(x.clone()).unwrap();
        let c = covariance(&ds).unwrap();
        let mut mean = [0.0; 3];
        for i in 0..5 {
            for j in 0..3 {
                mean[j] += x[[i, j]] / 5.0;
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for i in 0..5 {
                    s += (x[[i, a]] - mean[a]) * (x[[i, b]] - mean[b]);
                }
                assert!((c[[a, b]] - s / 5.0).abs() < 1e-12);
            }
        }
        let trace: f64 = c.diag().sum();
        assert!((trace - ds.total_variance()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix() {
        let m = Array2::from_diag(&ndarray::arr1(&[3.0, 1.0, 2.0]));
        let (vals, vecs) = eigh_symmetric(&m).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        let expected = ndarray::arr2(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert_eq!(vecs, expected);
        let (vals, _) = eigh_symmetric(&Array2::eye(4)).unwrap();
        assert_eq!(vals, vec![1.0; 4]);
    }

    #[test]
    fn reconstruction_of_random_symmetric() {
        let m = random_symmetric(6, 2);
        let (vals, vecs) = eigh_symmetric(&m).unwrap();
        let rebuilt = vecs.dot(&Array2::from_diag(&Array1::from(vals.clone()))).dot(&vecs.t());
        for (a, b) in rebuilt.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = ndarray::arr2(&[[1.0, 2.0], [2.1, 1.0]]);
        assert!(matches!(eigh_symmetric(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn sign_convention() {
        let m = random_symmetric(5, 4);
        let (_, vecs) = eigh_symmetric(&m).unwrap();
        for col in vecs.columns() {
            let pivot = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn normalized_weights_from_eigenvalues() {
        let s = DataSpectrum::from_eigenvalues(&[4.0, 2.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.total_variance, 8.0);
        assert_eq!(s.normalized_weights, vec![0.5, 0.25, 0.125, 0.125]);
        assert_eq!(s.cumulative_residual(), vec![1.0, 0.5, 0.25, 0.125, 0.0]);
    }

    #[test]
    fn single_dominant_mode_has_unit_threshold() {
        // all variance along one direction
        let x = Array2::from_shape_fn((50, 3), |(i, j)| (i as f64 - 24.5) * [1.0, 2.0, -1.0][j]);
        let s = pca_spectrum(&Dataset::from_samples(x).unwrap()).unwrap();
        assert!((s.normalized_weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_recovers_generator_weights() {
        let spectrum = [0.4, 0.2, 0.15, 0.1, 0.06, 0.04, 0.03, 0.02];
        let ds = generate_gaussian(&spectrum, 65_536, 1).unwrap();
        let s = pca_spectrum(&ds).unwrap();
        let total: f64 = spectrum.iter().sum();
        for (w, l) in s.normalized_weights.iter().zip(spectrum) {
            assert!((w - l / total).abs() / (l / total) < 0.05);
        }
    }

    proptest! {
        #[test]
        fn rotation_and_scale(seed in 0u64..1000, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::<f64>::from_shape_fn((30, 4), |_| StandardNormal.sample(&mut rng));
            let q = random_orthogonal(4, &mut rng);
            let base = pca_spectrum(&Dataset::from_samples(x.clone()).unwrap()).unwrap();
            let rotated = pca_spectrum(&Dataset::from_samples(x.dot(&q)).unwrap()).unwrap();
            let scaled = pca_spectrum(&Dataset::from_samples(&x * scale).unwrap()).unwrap();
            for k in 0..4 {
                prop_assert!((base.eigenvalues[k] - rotated.eigenvalues[k]).abs() < 1e-9);
                prop_assert!((scaled.eigenvalues[k] - scale * scale * base.eigenvalues[k]).abs()
                    < 1e-9 * scale * scale);
                prop_assert!((scaled.normalized_weights[k] - base.normalized_weights[k]).abs() < 1e-12);
            }
            let sum: f64 = base.normalized_weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(base.normalized_weights.windows(2).all(|w| w[0] >= w[1]));
            let utu = base.eigenvectors.t().dot(&base.eigenvectors);
            for ((i, j), v) in utu.indexed_iter() {
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - expected).abs() <= 1e-10);
            }
        }
    }
}
