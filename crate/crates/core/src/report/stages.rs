//! Pipeline stages. Each stage rebuilds the data deterministically from the
//! configuration and exchanges results with later stages through files in
//! the output directory.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{generate_gaussian, load_csv, random_split, spatial_block_split, standardize, write_csv, Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::model::{Objective, VaeParams};
use crate::report::config::{DataSource, RunConfig};
use crate::report::figures::{render_figures, FigureInputs};
use crate::report::io::{read_json, read_rows, write_json, write_rows};
use crate::scan::{
    collapse_spectrum, duality_report, rank_modes, run_scan, summary_rows, truncation_table, CollapseRow,
    CollapseSpectrum, DualityReport, RankedScan, ScanGrid, ScanPoint, ScanRow, TruncationRow, UtilityRow,
    UtilitySpectrum, utility_eval_point,
};
use crate::spectra::{pca_spectrum, DataSpectrum};
use crate::theory::predict_scan;

pub const DATA_CSV: &str = "data.csv";
pub const SPLIT_CSV: &str = "split.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const TRAIN_SPECTRUM_CSV: &str = "spectrum_train.csv";
pub const GRID_CSV: &str = "grid.csv";
pub const SCAN_CSV: &str = "scan.csv";
pub const SCAN_SUMMARY_CSV: &str = "scan_summary.csv";
pub const TRUNCATION_CSV: &str = "truncation.csv";
pub const COLLAPSE_CSV: &str = "collapse.csv";
pub const UTILITY_CSV: &str = "utility.csv";
pub const DUALITY_CSV: &str = "duality.csv";
pub const DUALITY_JSON: &str = "duality.json";
pub const PREDICTION_CSV: &str = "prediction.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const HISTORY_DIR: &str = "history";

/// The configured data with its split; CSV data is standardized with
/// training-split statistics.
pub struct Prepared {
    pub full: Dataset,
    pub split: SplitAssignment,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub dropped_rows: usize,
}

impl Prepared {
    /// PCA of the training split; sets the temperature grid.
    pub fn train_spectrum(&self) -> Result<DataSpectrum> {
        pca_spectrum(&self.train)
    }

    /// PCA of the test split, where observables and utilities are measured;
    /// the reference for the duality report.
    pub fn eval_spectrum(&self) -> Result<DataSpectrum> {
        pca_spectrum(&self.test)
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (full, split, dropped_rows) = match cfg.source()? {
        DataSource::Spectrum(s) => {
            let ds = generate_gaussian(&s, cfg.n, cfg.seed)?;
            let split = random_split(cfg.n, cfg.seed, cfg.train_frac, cfg.val_frac)?;
            (ds, split, 0)
        }
        DataSource::Csv(path) => {
            let load = load_csv(&path)?;
            let split = if load.dataset.coords().is_some() {
                spatial_block_split(&load.dataset, cfg.block_km, cfg.seed, cfg.train_frac, cfg.val_frac)?
            } else {
                random_split(load.dataset.n_samples(), cfg.seed, cfg.train_frac, cfg.val_frac)?
            };
            let (ds, _) = standardize(&load.dataset, &split.train_idx)?;
            (ds, split, load.dropped_rows)
        }
    };
    let (train, val, test) = split.apply(&full)?;
    Ok(Prepared {
        full,
        split,
        train,
        val,
        test,
        dropped_rows,
    })
}

/// Configured `T` range, defaulting to `10·max(λ_k/V)` down to
/// `min(λ_k/V)/100`.
pub fn grid_for(cfg: &RunConfig, spectrum: &DataSpectrum) -> Result<ScanGrid> {
    let weights = &spectrum.normalized_weights;
    let max = weights.iter().copied().fold(0.0, f64::max);
    let min = weights.iter().copied().filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
    ScanGrid::log_spaced(
        cfg.t_max.unwrap_or(10.0 * max),
        cfg.t_min.unwrap_or(min / 100.0),
        cfg.points_per_decade,
        spectrum.total_variance,
        cfg.train.dec_var,
    )
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Spectrum(s) = cfg.source()? else {
        return Err(Error::InvalidConfig("gen-data needs --spectrum".into()));
    };
    ensure_dir(&cfg.out)?;
    let ds = generate_gaussian(&s, cfg.n, cfg.seed)?;
    let path = cfg.out.join(DATA_CSV);
    write_csv(&ds, &path)?;
    Ok(vec![path])
}

pub fn split(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let prepared = prepare(cfg)?;
    if prepared.dropped_rows > 0 {
        info!("dropped {} rows with missing or non-finite values", prepared.dropped_rows);
    }
    let path = cfg.out.join(SPLIT_CSV);
    prepared.split.write_csv(&path)?;
    Ok(vec![path])
}

pub fn pca(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let prepared = prepare(cfg)?;
    let eval = cfg.out.join(SPECTRUM_CSV);
    let train = cfg.out.join(TRAIN_SPECTRUM_CSV);
    prepared.eval_spectrum()?.write_csv(&eval)?;
    prepared.train_spectrum()?.write_csv(&train)?;
    Ok(vec![eval, train])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub index: usize,
    pub temperature: f64,
    pub beta: f64,
}

fn checkpoint_name(index: usize) -> String {
    format!("point_{index:03}")
}

/// Trains the scan and writes observables, totals, truncated distortions,
/// checkpoints and training histories.
pub fn scan(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let prepared = prepare(cfg)?;
    let spectrum = prepared.train_spectrum()?;
    let grid = grid_for(cfg, &spectrum)?;
    info!("scanning {} temperatures from {} to {}", grid.len(), grid.temperatures()[0], grid.temperatures()[grid.len() - 1]);
    let points = run_scan(&prepared.train, &prepared.val, &prepared.test, &grid, &cfg.train, cfg.m)?;
    write_scan_outputs(cfg, &prepared, &grid, &points)
}

pub fn write_scan_outputs(cfg: &RunConfig, prepared: &Prepared, grid: &ScanGrid, points: &[ScanPoint]) -> Result<Vec<PathBuf>> {
    let out = &cfg.out;
    let ranking = rank_modes(points);
    let ranked = RankedScan::new(points, &ranking);
    let mut files = Vec::new();
    let mut put = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };
    let test = Objective::new(&prepared.test);
    prepared.eval_spectrum()?.write_csv(&put(SPECTRUM_CSV))?;
    prepared.train_spectrum()?.write_csv(&put(TRAIN_SPECTRUM_CSV))?;
    let grid_rows: Vec<GridRow> = grid
        .temperatures()
        .iter()
        .enumerate()
        .map(|(index, &temperature)| GridRow {
            index,
            temperature,
            beta: grid.beta(temperature),
        })
        .collect();
    write_rows(&put(GRID_CSV), &grid_rows)?;
    write_rows(&put(SCAN_CSV), &ranked.rows())?;
    write_rows(&put(SCAN_SUMMARY_CSV), &summary_rows(points))?;
    write_rows(&put(TRUNCATION_CSV), &truncation_table(points, &ranking, &test)?)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let hist = out.join(HISTORY_DIR);
    ensure_dir(&ckpt)?;
    ensure_dir(&hist)?;
    for (i, p) in points.iter().enumerate() {
        let path = ckpt.join(format!("{}.json", checkpoint_name(i)));
        std::fs::write(&path, p.result.params.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
        write_rows(&hist.join(format!("{}.csv", checkpoint_name(i))), &p.result.history)?;
    }
    Ok(files)
}

pub fn fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let rows: Vec<ScanRow> = read_rows(&cfg.out.join(SCAN_CSV))?;
    let scan = RankedScan::from_rows(&rows)?;
    let collapse = collapse_spectrum(&scan, scan.n_ranks());
    let path = cfg.out.join(COLLAPSE_CSV);
    write_rows(&path, &collapse.rows())?;
    Ok(vec![path])
}

/// Truncation utilities at the point chosen by [`utility_eval_point`].
pub fn utility(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let rows: Vec<ScanRow> = read_rows(&cfg.out.join(SCAN_CSV))?;
    let scan = RankedScan::from_rows(&rows)?;
    let (index, _) = utility_eval_point(&scan).ok_or(Error::NothingToCompare)?;
    let ckpt = cfg.out.join(CHECKPOINT_DIR).join(format!("{}.json", checkpoint_name(index)));
    let text = std::fs::read_to_string(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let params = VaeParams::from_json(&text)?;
    let prepared = prepare(cfg)?;
    let spectrum = utility_from_checkpoint(&scan, &params, &Objective::new(&prepared.test))?;
    let path = cfg.out.join(UTILITY_CSV);
    write_rows(&path, &spectrum.rows())?;
    Ok(vec![path])
}

/// Utilities of `params`, which must be the model trained at the scan's
/// utility evaluation point.
pub fn utility_from_checkpoint(scan: &RankedScan, params: &VaeParams, test: &Objective) -> Result<UtilitySpectrum> {
    let (index, n_modes) = utility_eval_point(scan).ok_or(Error::NothingToCompare)?;
    let order: Vec<usize> = scan.entries[index].iter().map(|e| e.latent).collect();
    let distortions = (0..=n_modes)
        .map(|k| test.truncated_distortion(params, &order[..k]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(UtilitySpectrum::from_distortions(scan.temperatures[index], distortions))
}

pub fn duality(cfg: &RunConfig) -> Result<(Vec<PathBuf>, DualityReport)> {
    let collapse = CollapseSpectrum::from_rows(&read_rows::<CollapseRow>(&cfg.out.join(COLLAPSE_CSV))?);
    let utility = UtilitySpectrum::from_rows(&read_rows::<UtilityRow>(&cfg.out.join(UTILITY_CSV))?)?;
    let spectrum = DataSpectrum::read_csv(&cfg.out.join(SPECTRUM_CSV))?;
    let report = duality_report(&collapse, &utility, &spectrum)?;
    let csv = cfg.out.join(DUALITY_CSV);
    let json = cfg.out.join(DUALITY_JSON);
    write_rows(&csv, &report.rows)?;
    write_json(&json, &report)?;
    Ok((vec![csv, json], report))
}

/// Theory-only prediction. A synthetic spectrum is used as given; CSV data
/// goes through PCA of the training split.
pub fn predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let spectrum = match cfg.source()? {
        DataSource::Spectrum(s) => DataSpectrum::from_eigenvalues(&s)?,
        DataSource::Csv(_) => prepare(cfg)?.train_spectrum()?,
    };
    let grid = grid_for(cfg, &spectrum)?;
    let prediction = predict_scan(&spectrum, &grid)?;
    let path = cfg.out.join(PREDICTION_CSV);
    write_rows(&path, &prediction.rows())?;
    Ok(vec![path])
}

pub fn figures(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let rows: Vec<ScanRow> = read_rows(&cfg.out.join(SCAN_CSV))?;
    let scan = RankedScan::from_rows(&rows)?;
    let collapse = CollapseSpectrum::from_rows(&read_rows::<CollapseRow>(&cfg.out.join(COLLAPSE_CSV))?);
    let truncation: Vec<TruncationRow> = read_rows(&cfg.out.join(TRUNCATION_CSV))?;
    let duality: DualityReport = read_json(&cfg.out.join(DUALITY_JSON))?;
    let spectrum = DataSpectrum::read_csv(&cfg.out.join(SPECTRUM_CSV))?;
    render_figures(
        &FigureInputs {
            scan: &scan,
            collapse: &collapse,
            truncation: &truncation,
            duality: &duality,
            pca_weights: &spectrum.normalized_weights,
        },
        &cfg.out,
    )
}

/// Every stage in order. Returns the written files and the duality report.
pub fn all(cfg: &RunConfig) -> Result<(Vec<PathBuf>, DualityReport)> {
    let mut files = Vec::new();
    if matches!(cfg.source()?, DataSource::Spectrum(_)) {
        files.extend(gen_data(cfg)?);
    }
    files.extend(split(cfg)?);
    files.extend(scan(cfg)?);
    files.extend(fit(cfg)?);
    files.extend(utility(cfg)?);
    let (dual_files, report) = duality(cfg)?;
    files.extend(dual_files);
    files.extend(predict(cfg)?);
    if cfg.figures {
        files.extend(figures(cfg)?);
    }
    Ok((files, report))
}
