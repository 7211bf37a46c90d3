//! The four scan figures: order parameters, truncated distortion, utility
//! against threshold, and posterior-scale diagnostics.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::report::svg::{color, render, Panel, Scale, Series, Style};
use crate::scan::{CollapseSpectrum, DualityReport, RankedScan, TruncationRow, ACTIVE_SIGNAL_FRACTION};

pub const FIGURE_FILES: [&str; 4] = [
    "fig1_order_parameters.svg",
    "fig2_truncated_distortion.svg",
    "fig3_utility_vs_threshold.svg",
    "fig4_scale_diagnostics.svg",
];

pub struct FigureInputs<'a> {
    pub scan: &'a RankedScan,
    pub collapse: &'a CollapseSpectrum,
    pub truncation: &'a [TruncationRow],
    pub duality: &'a DualityReport,
    /// `λ_k / V` of the reference PCA spectrum.
    pub pca_weights: &'a [f64],
}

/// Ranks that are active somewhere in the scan; rank 1 if none is.
fn plotted_ranks(scan: &RankedScan) -> Vec<usize> {
    let ranks: Vec<usize> = (1..=scan.n_ranks())
        .filter(|&r| scan.curve(r).iter().any(|&(_, m2)| m2 > ACTIVE_SIGNAL_FRACTION))
        .collect();
    if ranks.is_empty() && scan.n_ranks() > 0 {
        vec![1]
    } else {
        ranks
    }
}

fn rank_series(scan: &RankedScan, rank: usize, style: Style, f: impl Fn(&crate::model::ModeObservables) -> f64) -> Series {
    let points = scan
        .temperatures
        .iter()
        .zip(&scan.entries)
        .map(|(&t, e)| (t, f(&e[rank - 1].observables)))
        .collect();
    Series::new(format!("rank {rank}"), color(rank - 1), style, points)
}

fn require_scan(scan: &RankedScan) -> Result<()> {
    if scan.temperatures.is_empty() || scan.n_ranks() == 0 {
        return Err(Error::NothingToPlot("scan has no points".into()));
    }
    Ok(())
}

/// `μ̄²`, `M²` with fitted one-mode laws, and mean log-variance against `T`.
pub fn order_parameter_figure(scan: &RankedScan, collapse: &CollapseSpectrum) -> Result<String> {
    require_scan(scan)?;
    let ranks = plotted_ranks(scan);
    let mut mu = Panel::new("posterior mean power", "T", "mean mu^2", Scale::Log, Scale::Linear);
    let mut m2 = Panel::new("signal fraction", "T", "M^2", Scale::Log, Scale::Linear);
    let mut lv = Panel::new("mean log-variance", "T", "mean log sigma^2", Scale::Log, Scale::Linear);
    m2.y_range = Some((-0.05, 1.05));
    let t_lo = scan.temperatures.iter().copied().fold(f64::INFINITY, f64::min);
    let t_hi = scan.temperatures.iter().copied().fold(0.0, f64::max);
    for &r in &ranks {
        mu.series.push(rank_series(scan, r, Style::LineMarkers, |o| o.mu_sq));
        m2.series.push(rank_series(scan, r, Style::Markers, |o| o.signal_fraction));
        lv.series.push(rank_series(scan, r, Style::LineMarkers, |o| o.logvar_mean));
        if let Some(fit) = collapse.modes.iter().find(|m| m.rank == r).and_then(|m| m.fit) {
            let n = 64;
            let points = (0..=n)
                .map(|i| {
                    let t = t_lo * (t_hi / t_lo).powf(i as f64 / n as f64);
                    (t, fit.predict(t))
                })
                .collect();
            m2.series.push(Series::new("", color(r - 1), Style::Dashed, points));
        }
    }
    Ok(render("Order-parameter collapse scan", &[mu, m2, lv]))
}

/// `D̃_k(T)` for every truncation level, and the best `D̃_k` against `k`
/// with the PCA residual `1 − Σ_{j≤k} λ_j/V`.
pub fn truncation_figure(truncation: &[TruncationRow], pca_weights: &[f64]) -> Result<String> {
    if truncation.is_empty() {
        return Err(Error::NothingToPlot("no truncated distortions".into()));
    }
    let max_k = truncation.iter().map(|r| r.k).max().unwrap_or(0);
    let mut curves = Panel::new("truncated distortion", "T", "D_k / V", Scale::Log, Scale::Log);
    let mut best = Panel::new("best distortion vs rank", "k", "D_k / V", Scale::Linear, Scale::Log);
    let mut best_points = Vec::new();
    for k in 0..=max_k {
        let points: Vec<(f64, f64)> = truncation
            .iter()
            .filter(|r| r.k == k)
            .map(|r| (r.temperature, r.distortion))
            .collect();
        if let Some(min) = points.iter().map(|p| p.1).reduce(f64::min) {
            best_points.push((k as f64, min));
        }
        curves.series.push(Series::new(
            if k <= 12 { format!("k = {k}") } else { String::new() },
            color(k),
            Style::Line,
            points,
        ));
    }
    best.series.push(Series::new("trained", color(0), Style::LineMarkers, best_points));
    let mut residual = 1.0;
    let mut pca = vec![(0.0, 1.0)];
    for (k, w) in pca_weights.iter().enumerate() {
        residual -= w;
        pca.push(((k + 1) as f64, residual));
    }
    best.series.push(Series::new("PCA residual", "#000000", Style::Dashed, pca));
    Ok(render("Truncated distortion and rank pruning", &[curves, best]))
}

/// Measured utility `ΔD̃_k` against fitted threshold `T_k` with the `y = x`
/// guide.
pub fn duality_figure(report: &DualityReport) -> Result<String> {
    let mut panel = Panel::new("utility vs collapse threshold", "T_k", "utility dD_k", Scale::Log, Scale::Log);
    panel.diagonal = true;
    for row in &report.rows {
        if let (Some(t), Some(u)) = (row.threshold, row.utility) {
            panel.series.push(Series::new(
                format!("rank {}", row.rank),
                color(row.rank - 1),
                Style::Markers,
                vec![(t, u)],
            ));
        }
    }
    if !panel.has_data() {
        return Err(Error::NothingToPlot("no rank has both a threshold and a utility".into()));
    }
    Ok(render("Reconstruction utility vs collapse threshold", &[panel]))
}

/// Posterior scale `A²` and Jensen gap `J` against `T`.
pub fn diagnostics_figure(scan: &RankedScan) -> Result<String> {
    require_scan(scan)?;
    let mut scale = Panel::new("posterior scale", "T", "A^2", Scale::Log, Scale::Linear);
    let mut gap = Panel::new("Jensen gap", "T", "J", Scale::Log, Scale::Linear);
    for r in plotted_ranks(scan) {
        scale.series.push(rank_series(scan, r, Style::LineMarkers, |o| o.scale));
        gap.series.push(rank_series(scan, r, Style::LineMarkers, |o| o.jensen_gap));
    }
    Ok(render("Posterior-scale and Jensen-gap diagnostic", &[scale, gap]))
}

/// Writes the four figures into `out_dir` and returns their paths.
pub fn render_figures(inputs: &FigureInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let svgs = [
        order_parameter_figure(inputs.scan, inputs.collapse)?,
        truncation_figure(inputs.truncation, inputs.pca_weights)?,
        duality_figure(inputs.duality)?,
        diagnostics_figure(inputs.scan)?,
    ];
    let mut paths = Vec::new();
    for (name, svg) in FIGURE_FILES.iter().zip(svgs) {
        let path = out_dir.join(name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
