//! The temperature scan: independent equilibrium trainings over a grid of
//! `T`, signal-fraction ranking, collapse-threshold fits, truncation
//! utilities and the threshold/utility/PCA comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LossBreakdown, ModeObservables, Objective};
use crate::spectra::DataSpectrum;
use crate::trainer::{init_params, train_from, TrainConfig, TrainResult};

/// Signal fraction above which a mode counts as active and enters a fit.
pub const ACTIVE_SIGNAL_FRACTION: f64 = 0.1;
/// Fits with fewer points than this are unreliable.
pub const MIN_RELIABLE_POINTS: usize = 3;
/// Fits with an RMS residual above this are unreliable.
pub const MAX_RELIABLE_RESIDUAL: f64 = 0.05;
pub const DEFAULT_POINTS_PER_DECADE: usize = 8;
/// Signal fraction every utility-bearing mode must reach at the utility
/// evaluation temperature.
pub const UTILITY_SIGNAL_FRACTION: f64 = 0.95;

/// Descending temperatures with the `V` and `σ²_dec` that map them to `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    temperatures: Vec<f64>,
    control_variance: f64,
    dec_var: f64,
}

impl ScanGrid {
    pub fn new(temperatures: Vec<f64>, control_variance: f64, dec_var: f64) -> Result<Self> {
        if temperatures.len() < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 temperatures, got {}", temperatures.len())));
        }
        if temperatures.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidGrid("temperatures must be positive and finite".into()));
        }
        if temperatures.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidGrid("temperatures must be strictly descending".into()));
        }
        if !(control_variance > 0.0 && dec_var > 0.0) {
            return Err(Error::InvalidGrid("variance and decoder variance must be positive".into()));
        }
        Ok(Self {
            temperatures,
            control_variance,
            dec_var,
        })
    }

    /// Log-spaced from `t_max` down to `t_min`, both included.
    pub fn log_spaced(t_max: f64, t_min: f64, points_per_decade: usize, control_variance: f64, dec_var: f64) -> Result<Self> {
        if !(t_max > t_min && t_min > 0.0) || points_per_decade == 0 {
            return Err(Error::InvalidGrid(format!(
                "need t_max > t_min > 0 and points per decade ≥ 1 (got {t_max}, {t_min}, {points_per_decade})"
            )));
        }
        let decades = (t_max / t_min).log10();
        let intervals = ((decades * points_per_decade as f64) - 1e-9).ceil().max(2.0) as usize;
        let temperatures = (0..=intervals)
            .map(|i| t_max * (t_min / t_max).powf(i as f64 / intervals as f64))
            .collect();
        Self::new(temperatures, control_variance, dec_var)
    }

    /// From `10·max(λ_k/V)` down to `min(λ_k/V)/100`, 8 points per decade.
    pub fn default_for(spectrum: &DataSpectrum, dec_var: f64) -> Result<Self> {
        let max = spectrum.normalized_weights.iter().copied().fold(0.0, f64::max);
        let min = spectrum
            .normalized_weights
            .iter()
            .copied()
            .filter(|w| *w > 0.0)
            .fold(f64::INFINITY, f64::min);
        Self::log_spaced(10.0 * max, min / 100.0, DEFAULT_POINTS_PER_DECADE, spectrum.total_variance, dec_var)
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn control_variance(&self) -> f64 {
        self.control_variance
    }

    pub fn dec_var(&self) -> f64 {
        self.dec_var
    }

    /// `β = T V / σ²_dec`
    pub fn beta(&self, temperature: f64) -> f64 {
        temperature * self.control_variance / self.dec_var
    }

    pub fn betas(&self) -> Vec<f64> {
        self.temperatures.iter().map(|&t| self.beta(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }
}

/// One trained equilibrium with its observables on the evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub temperature: f64,
    pub beta: f64,
    pub result: TrainResult,
    pub observables: Vec<ModeObservables>,
    pub loss: LossBreakdown,
}

/// Trains one model per grid temperature and evaluates it on `test`.
///
/// Points are independent and run in parallel on the current rayon pool
/// unless `cfg.warm_start` chains them in grid order.
pub fn run_scan(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    grid: &ScanGrid,
    cfg: &TrainConfig,
    latent_dim: usize,
) -> Result<Vec<ScanPoint>> {
    cfg.validate()?;
    if latent_dim == 0 {
        return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
    }
    let cfg = TrainConfig {
        dec_var: grid.dec_var(),
        ..cfg.clone()
    };
    let test_obj = Objective::new(test);
    let d = train.n_features();
    let fresh = || init_params(d, latent_dim, cfg.seed, cfg.init_scale, cfg.dec_var);

    let evaluate = |temperature: f64, result: TrainResult| -> Result<ScanPoint> {
        let beta = grid.beta(temperature);
        let observables = test_obj.observables(&result.params)?;
        let loss = test_obj.loss_at(&result.params, beta, grid.control_variance())?;
        Ok(ScanPoint {
            temperature,
            beta,
            result,
            observables,
            loss,
        })
    };
    let annotate = |temperature: f64| {
        move |e: Error| Error::ScanPointFailed {
            temperature,
            source: Box::new(e),
        }
    };

    if cfg.warm_start {
        let mut points = Vec::with_capacity(grid.len());
        let mut init = fresh();
        for &t in grid.temperatures() {
            let result = train_from(init.clone(), train, val, grid.beta(t), &cfg).map_err(annotate(t))?;
            init = result.params.clone();
            points.push(evaluate(t, result).map_err(annotate(t))?);
        }
        return Ok(points);
    }

    grid.temperatures()
        .par_iter()
        .map(|&t| {
            let result = train_from(fresh(), train, val, grid.beta(t), &cfg).map_err(annotate(t))?;
            evaluate(t, result).map_err(annotate(t))
        })
        .collect()
}

/// Per-temperature ordering of latent indices by descending signal fraction
/// (ties by latent index). Rank `k` at temperature `i` is
/// `orders[i][k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub orders: Vec<Vec<usize>>,
}

impl Ranking {
    /// Latent index realizing `rank` (1-based) at every temperature.
    pub fn trajectory(&self, rank: usize) -> Vec<usize> {
        self.orders.iter().map(|o| o[rank - 1]).collect()
    }
}

pub fn rank_by_signal_fraction(observables: &[ModeObservables]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..observables.len()).collect();
    order.sort_by(|&a, &b| {
        observables[b]
            .signal_fraction
            .total_cmp(&observables[a].signal_fraction)
            .then(a.cmp(&b))
    });
    order
}

pub fn rank_modes(points: &[ScanPoint]) -> Ranking {
    Ranking {
        orders: points.iter().map(|p| rank_by_signal_fraction(&p.observables)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub latent: usize,
    pub observables: ModeObservables,
}

/// Scan observables reindexed by rank: `entries[i][k - 1]` is rank `k` at
/// temperature `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScan {
    pub temperatures: Vec<f64>,
    pub betas: Vec<f64>,
    pub entries: Vec<Vec<RankedEntry>>,
}

/// One row of `scan.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub temperature: f64,
    pub beta: f64,
    pub rank: usize,
    pub latent: usize,
    pub mu_sq: f64,
    pub var_mean: f64,
    pub logvar_mean: f64,
    pub rate: f64,
    pub signal_fraction: f64,
    pub scale: f64,
    pub jensen_gap: f64,
}

impl RankedScan {
    pub fn new(points: &[ScanPoint], ranking: &Ranking) -> Self {
        let entries = points
            .iter()
            .zip(&ranking.orders)
            .map(|(p, order)| {
                order
                    .iter()
                    .map(|&latent| RankedEntry {
                        latent,
                        observables: p.observables[latent],
                    })
                    .collect()
            })
            .collect();
        Self {
            temperatures: points.iter().map(|p| p.temperature).collect(),
            betas: points.iter().map(|p| p.beta).collect(),
            entries,
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// `(T, M²)` along the trajectory of `rank` (1-based).
    pub fn curve(&self, rank: usize) -> Vec<(f64, f64)> {
        self.temperatures
            .iter()
            .zip(&self.entries)
            .map(|(&t, e)| (t, e[rank - 1].observables.signal_fraction))
            .collect()
    }

    pub fn trajectory(&self, rank: usize) -> Vec<usize> {
        self.entries.iter().map(|e| e[rank - 1].latent).collect()
    }

    /// Number of modes with `M² > 0.1` at each temperature.
    pub fn active_counts(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| e.iter().filter(|x| x.observables.signal_fraction > ACTIVE_SIGNAL_FRACTION).count())
            .collect()
    }

    pub fn rows(&self) -> Vec<ScanRow> {
        let mut rows = Vec::new();
        for ((&temperature, &beta), entries) in self.temperatures.iter().zip(&self.betas).zip(&self.entries) {
            for (k, e) in entries.iter().enumerate() {
                let o = e.observables;
                rows.push(ScanRow {
                    temperature,
                    beta,
                    rank: k + 1,
                    latent: e.latent,
                    mu_sq: o.mu_sq,
                    var_mean: o.var_mean,
                    logvar_mean: o.logvar_mean,
                    rate: o.rate,
                    signal_fraction: o.signal_fraction,
                    scale: o.scale,
                    jensen_gap: o.jensen_gap,
                });
            }
        }
        rows
    }

    /// Inverse of [`RankedScan::rows`]; rows must be grouped by temperature
    /// in scan order with ranks `1..=m` inside each group.
    pub fn from_rows(rows: &[ScanRow]) -> Result<Self> {
        let mut scan = RankedScan {
            temperatures: Vec::new(),
            betas: Vec::new(),
            entries: Vec::new(),
        };
        for row in rows {
            let new_group = scan.temperatures.last() != Some(&row.temperature);
            if new_group {
                scan.temperatures.push(row.temperature);
                scan.betas.push(row.beta);
                scan.entries.push(Vec::new());
            }
            let group = scan.entries.last_mut().expect("group pushed above");
            if row.rank != group.len() + 1 {
                return Err(Error::InvalidGrid(format!(
                    "scan rows out of order at T = {}: expected rank {}, found {}",
                    row.temperature,
                    group.len() + 1,
                    row.rank
                )));
            }
            group.push(RankedEntry {
                latent: row.latent,
                observables: ModeObservables {
                    mu_sq: row.mu_sq,
                    var_mean: row.var_mean,
                    logvar_mean: row.logvar_mean,
                    rate: row.rate,
                    signal_fraction: row.signal_fraction,
                    scale: row.scale,
                    jensen_gap: row.jensen_gap,
                },
            });
        }
        if scan.entries.iter().any(|e| e.len() != scan.n_ranks()) {
            return Err(Error::InvalidGrid("scan rows have unequal rank counts".into()));
        }
        Ok(scan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub threshold: f64,
    /// RMS misfit over the included points.
    pub residual: f64,
    pub n_used: usize,
}

impl ThresholdFit {
    pub fn reliable(&self) -> bool {
        self.n_used >= MIN_RELIABLE_POINTS && self.residual <= MAX_RELIABLE_RESIDUAL
    }

    /// `[1 − T/T_k]₊`
    pub fn predict(&self, temperature: f64) -> f64 {
        (1.0 - temperature / self.threshold).max(0.0)
    }
}

/// Least-squares fit of `M² = 1 − T/T_k` over the points with `M² > 0.1`:
/// `T_k = Σ T² / Σ T (1 − M²)`.
pub fn fit_threshold(rank: usize, curve: &[(f64, f64)]) -> Result<ThresholdFit> {
    let used: Vec<(f64, f64)> = curve
        .iter()
        .copied()
        .filter(|&(_, m2)| m2 > ACTIVE_SIGNAL_FRACTION)
        .collect();
    if used.len() < 2 {
        return Err(Error::NoActiveBranch(rank));
    }
    let num: f64 = used.iter().map(|(t, _)| t * t).sum();
    let den: f64 = used.iter().map(|(t, m2)| t * (1.0 - m2)).sum();
    if !(den > 0.0) {
        return Err(Error::NoActiveBranch(rank));
    }
    let threshold = num / den;
    let sse: f64 = used
        .iter()
        .map(|&(t, m2)| {
            let r = m2 - (1.0 - t / threshold);
            r * r
        })
        .sum();
    Ok(ThresholdFit {
        threshold,
        residual: (sse / used.len() as f64).sqrt(),
        n_used: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseMode {
    pub rank: usize,
    /// `None` when the rank has no active branch in the scan.
    pub fit: Option<ThresholdFit>,
    pub latent_trace: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSpectrum {
    pub modes: Vec<CollapseMode>,
}

/// One row of `collapse.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub rank: usize,
    pub threshold: Option<f64>,
    pub residual: Option<f64>,
    pub n_used: usize,
    pub reliable: bool,
}

impl CollapseSpectrum {
    pub fn thresholds(&self) -> Vec<Option<f64>> {
        self.modes.iter().map(|m| m.fit.map(|f| f.threshold)).collect()
    }

    pub fn rows(&self) -> Vec<CollapseRow> {
        self.modes
            .iter()
            .map(|m| CollapseRow {
                rank: m.rank,
                threshold: m.fit.map(|f| f.threshold),
                residual: m.fit.map(|f| f.residual),
                n_used: m.fit.map_or(0, |f| f.n_used),
                reliable: m.fit.is_some_and(|f| f.reliable()),
            })
            .collect()
    }

    pub fn from_rows(rows: &[CollapseRow]) -> Self {
        let modes = rows
            .iter()
            .map(|r| CollapseMode {
                rank: r.rank,
                fit: r.threshold.map(|threshold| ThresholdFit {
                    threshold,
                    residual: r.residual.unwrap_or(f64::INFINITY),
                    n_used: r.n_used,
                }),
                latent_trace: Vec::new(),
            })
            .collect();
        Self { modes }
    }
}

/// Fits every rank up to `max_rank`; ranks without an active branch are
/// kept with `fit: None`.
pub fn collapse_spectrum(scan: &RankedScan, max_rank: usize) -> CollapseSpectrum {
    let max_rank = max_rank.min(scan.n_ranks());
    let modes = (1..=max_rank)
        .map(|rank| CollapseMode {
            rank,
            fit: fit_threshold(rank, &scan.curve(rank)).ok(),
            latent_trace: scan.trajectory(rank),
        })
        .collect();
    CollapseSpectrum { modes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpectrum {
    pub t_eval: f64,
    /// `D̃_k` for `k = 0..=K`.
    pub distortions: Vec<f64>,
    /// `ΔD̃_k = D̃_{k−1} − D̃_k` for `k = 1..=K`.
    pub utilities: Vec<f64>,
}

/// One row of `utility.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub k: usize,
    pub t_eval: f64,
    pub distortion: f64,
    pub utility: Option<f64>,
}

impl UtilitySpectrum {
    pub fn from_distortions(t_eval: f64, distortions: Vec<f64>) -> Self {
        let utilities = distortions.windows(2).map(|w| w[0] - w[1]).collect();
        Self {
            t_eval,
            distortions,
            utilities,
        }
    }

    pub fn rows(&self) -> Vec<UtilityRow> {
        self.distortions
            .iter()
            .enumerate()
            .map(|(k, &distortion)| UtilityRow {
                k,
                t_eval: self.t_eval,
                distortion,
                utility: (k > 0).then(|| self.utilities[k - 1]),
            })
            .collect()
    }

    pub fn from_rows(rows: &[UtilityRow]) -> Result<Self> {
        let t_eval = rows.first().ok_or(Error::NothingToCompare)?.t_eval;
        Ok(Self::from_distortions(t_eval, rows.iter().map(|r| r.distortion).collect()))
    }
}

/// Scan index at which utilities are measured, with the number of modes to
/// truncate over.
///
/// The modes are those active at the coldest point. The evaluation point is
/// the warmest one at which all of them have `M² ≥ 0.95`, so that the
/// truncation utilities `λ_k (1 − τ_k²) / V` are within 0.25% of `λ_k / V`;
/// colder points only add optimization time for the slowly converging
/// latent alignment. Falls back to the coldest point.
pub fn utility_eval_point(scan: &RankedScan) -> Option<(usize, usize)> {
    let last = scan.temperatures.len().checked_sub(1)?;
    let n_modes = scan.active_counts()[last];
    let index = (0..=last)
        .find(|&i| {
            n_modes > 0
                && scan.entries[i][..n_modes]
                    .iter()
                    .all(|e| e.observables.signal_fraction >= UTILITY_SIGNAL_FRACTION)
        })
        .unwrap_or(last);
    Some((index, n_modes))
}

/// `D̃_k` for `k = 0..=max_rank`, keeping the top-`k` latents of `order`.
pub fn truncation_curve(point: &ScanPoint, order: &[usize], eval: &Objective, max_rank: usize) -> Result<Vec<f64>> {
    let m = point.result.params.latent_dim();
    if max_rank > m || order.len() != m {
        return Err(Error::IndexError { index: max_rank, m });
    }
    (0..=max_rank)
        .map(|k| eval.truncated_distortion(&point.result.params, &order[..k]))
        .collect()
}

/// Truncation utilities of the model trained at `point`, measured on `eval`.
pub fn utility_spectrum(point: &ScanPoint, order: &[usize], eval: &Objective, max_rank: usize) -> Result<UtilitySpectrum> {
    Ok(UtilitySpectrum::from_distortions(
        point.temperature,
        truncation_curve(point, order, eval, max_rank)?,
    ))
}

/// One row of `truncation.csv`: `D̃_k` at one scan temperature, keeping the
/// top-`k` latents ranked at that temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub temperature: f64,
    pub k: usize,
    pub distortion: f64,
}

pub fn truncation_table(points: &[ScanPoint], ranking: &Ranking, eval: &Objective) -> Result<Vec<TruncationRow>> {
    let mut rows = Vec::new();
    for (p, order) in points.iter().zip(&ranking.orders) {
        let curve = truncation_curve(p, order, eval, order.len())?;
        rows.extend(curve.into_iter().enumerate().map(|(k, distortion)| TruncationRow {
            temperature: p.temperature,
            k,
            distortion,
        }));
    }
    Ok(rows)
}

/// `|a − b| / max(a, b)`
pub fn pairwise_deviation(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn relative_to(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (value - reference).abs() / reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub rank: usize,
    pub threshold: Option<f64>,
    pub fit_residual: Option<f64>,
    pub n_used: usize,
    pub reliable: bool,
    pub utility: Option<f64>,
    pub lambda_over_v: f64,
    /// `|T_k − ΔD̃_k| / max(T_k, ΔD̃_k)`
    pub threshold_vs_utility: Option<f64>,
    /// `|T_k − λ_k/V| / (λ_k/V)`
    pub threshold_vs_pca: Option<f64>,
    /// `|ΔD̃_k − λ_k/V| / (λ_k/V)`
    pub utility_vs_pca: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySummary {
    pub n_ranks: usize,
    pub n_reliable: usize,
    pub max_deviation: Option<f64>,
    pub median_deviation: Option<f64>,
    pub max_threshold_vs_pca: Option<f64>,
    pub max_utility_vs_pca: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub summary: DualitySummary,
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Joins fitted thresholds, measured utilities and PCA weights by rank.
/// Summary statistics cover only ranks with a reliable fit and a measured
/// utility.
pub fn duality_report(collapse: &CollapseSpectrum, utility: &UtilitySpectrum, pca: &DataSpectrum) -> Result<DualityReport> {
    let covered = collapse.modes.len().max(utility.utilities.len());
    let max_rank = covered.min(pca.dim());
    let mut rows = Vec::with_capacity(max_rank);
    for rank in 1..=max_rank {
        let fit = collapse.modes.iter().find(|m| m.rank == rank).and_then(|m| m.fit);
        let threshold = fit.map(|f| f.threshold);
        let util = utility.utilities.get(rank - 1).copied();
        let lambda_over_v = pca.normalized_weights[rank - 1];
        rows.push(DualityRow {
            rank,
            threshold,
            fit_residual: fit.map(|f| f.residual),
            n_used: fit.map_or(0, |f| f.n_used),
            reliable: fit.is_some_and(|f| f.reliable()),
            utility: util,
            lambda_over_v,
            threshold_vs_utility: threshold.zip(util).map(|(t, u)| pairwise_deviation(t, u)),
            threshold_vs_pca: threshold.map(|t| relative_to(t, lambda_over_v)),
            utility_vs_pca: util.map(|u| relative_to(u, lambda_over_v)),
        });
    }
    if rows.iter().all(|r| r.threshold.is_none() && r.utility.is_none()) {
        return Err(Error::NothingToCompare);
    }
    let counted: Vec<&DualityRow> = rows.iter().filter(|r| r.reliable && r.utility.is_some()).collect();
    let summary = DualitySummary {
        n_ranks: rows.len(),
        n_reliable: counted.len(),
        max_deviation: max_of(counted.iter().filter_map(|r| r.threshold_vs_utility)),
        median_deviation: median_of(counted.iter().filter_map(|r| r.threshold_vs_utility).collect()),
        max_threshold_vs_pca: max_of(counted.iter().filter_map(|r| r.threshold_vs_pca)),
        max_utility_vs_pca: max_of(counted.iter().filter_map(|r| r.utility_vs_pca)),
    };
    Ok(DualityReport { rows, summary })
}

/// Per-temperature totals, written as `scan_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummaryRow {
    pub temperature: f64,
    pub beta: f64,
    pub distortion_normalized: f64,
    pub distortion_nats: f64,
    pub rate_nats: f64,
    pub total: f64,
    pub n_active: usize,
    pub updates_used: usize,
    pub stopped_early: bool,
}

pub fn summary_rows(points: &[ScanPoint]) -> Vec<ScanSummaryRow> {
    points
        .iter()
        .map(|p| ScanSummaryRow {
            temperature: p.temperature,
            beta: p.beta,
            distortion_normalized: p.loss.distortion_normalized,
            distortion_nats: p.loss.distortion_nats,
            rate_nats: p.loss.rate_nats,
            total: p.loss.total,
            n_active: p
                .observables
                .iter()
                .filter(|o| o.signal_fraction > ACTIVE_SIGNAL_FRACTION)
                .count(),
            updates_used: p.result.updates_used,
            stopped_early: p.result.stopped_early,
        })
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
