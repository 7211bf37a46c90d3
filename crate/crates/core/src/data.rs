//! Datasets: synthetic Gaussian generation, CSV ingestion, per-feature
//! standardization and geography-aware spatial-block splits.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for block geometry.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lon: f64,
    pub lat: f64,
}

/// Samples × features, with optional per-sample coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Array2<f64>,
    feature_names: Vec<String>,
    coords: Option<Vec<GeoCoord>>,
}

impl Dataset {
    pub fn new(
        samples: Array2<f64>,
        feature_names: Vec<String>,
        coords: Option<Vec<GeoCoord>>,
    ) -> Result<Self> {
        let (n, d) = samples.dim();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        if d == 0 {
            return Err(Error::InvalidDataset("no features".into()));
        }
        if feature_names.len() != d {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                d
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite sample entry".into()));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} coordinates for {} samples",
                    c.len(),
                    n
                )));
            }
            if let Some(bad) = c.iter().find(|g| !valid_coord(g)) {
                return Err(Error::InvalidDataset(format!(
                    "coordinate out of range: lon {}, lat {}",
                    bad.lon, bad.lat
                )));
            }
        }
        Ok(Self {
            samples,
            feature_names,
            coords,
        })
    }

    /// Dataset with generated feature names `f1..fd` and no coordinates.
    pub fn from_samples(samples: Array2<f64>) -> Result<Self> {
        let names = default_feature_names(samples.ncols());
        Self::new(samples, names, None)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn coords(&self) -> Option<&[GeoCoord]> {
        self.coords.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.samples.ncols()
    }

    pub fn mean(&self) -> Array1<f64> {
        self.samples
            .mean_axis(Axis(0))
            .expect("dataset has at least two rows")
    }

    /// Total variance `V`: the mean squared deviation from the data mean.
    pub fn total_variance(&self) -> f64 {
        let mean = self.mean();
        let n = self.n_samples() as f64;
        self.samples
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(mean.iter())
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::InvalidDataset(format!("row index {bad} out of range")));
        }
        let samples = self.samples.select(Axis(0), idx);
        let coords = self
            .coords
            .as_ref()
            .map(|c| idx.iter().map(|&i| c[i]).collect());
        Self::new(samples, self.feature_names.clone(), coords)
    }
}

fn valid_coord(g: &GeoCoord) -> bool {
    g.lat.is_finite()
        && g.lon.is_finite()
        && (-90.0..=90.0).contains(&g.lat)
        && (-180.0..180.0).contains(&g.lon)
}

fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("f{j}")).collect()
}

/// Seeded random orthogonal matrix: modified Gram-Schmidt QR of a Gaussian
/// matrix. The R factor comes out with a positive diagonal, which fixes the
/// column signs.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::from_shape_fn((d, d), |_| StandardNormal.sample(rng));
    for j in 0..d {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &qi);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Zero-mean Gaussian samples whose population covariance has eigenvalues
/// `spectrum` in a seeded random orthonormal basis.
pub fn generate_gaussian(spectrum: &[f64], n_samples: usize, seed: u64) -> Result<Dataset> {
    if spectrum.is_empty() {
        return Err(Error::InvalidSpectrum("empty spectrum".into()));
    }
    if let Some(bad) = spectrum.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidSpectrum(format!(
            "eigenvalues must be positive and finite, got {bad}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: n_samples,
        });
    }
    let d = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthogonal(d, &mut rng);
    let scales: Array1<f64> = spectrum.iter().map(|l| l.sqrt()).collect();
    // mixing[i, k] = U[i, k] * sqrt(lambda_k); x = mixing * z
    let mixing = &basis * &scales.insert_axis(Axis(0));
    let latent = Array2::<f64>::from_shape_fn((n_samples, d), |_| StandardNormal.sample(&mut rng));
    let samples = latent.dot(&mixing.t());
    Dataset::from_samples(samples)
}

/// Per-feature statistics used by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_dim(ds)?;
        let mut samples = ds.samples.clone();
        for (j, mut col) in samples.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| (x - m) / s);
        }
        Dataset::new(samples, ds.feature_names.clone(), ds.coords.clone())
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_dim(ds)?;
        let mut samples = ds.samples.clone();
        for (j, mut col) in samples.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|z| z * s + m);
        }
        Dataset::new(samples, ds.feature_names.clone(), ds.coords.clone())
    }

    fn check_dim(&self, ds: &Dataset) -> Result<()> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::ShapeError(format!(
                "standardization has {} features, dataset has {}",
                self.mean.len(),
                ds.n_features()
            )));
        }
        Ok(())
    }
}

/// Standardizes every feature with mean and (population) standard deviation
/// computed over the `stats_source_idx` rows only.
pub fn standardize(ds: &Dataset, stats_source_idx: &[usize]) -> Result<(Dataset, Standardization)> {
    if stats_source_idx.is_empty() {
        return Err(Error::InvalidDataset("empty statistics source".into()));
    }
    let source = ds.samples.select(Axis(0), stats_source_idx);
    let n = source.nrows() as f64;
    let mut mean = Vec::with_capacity(ds.n_features());
    let mut std = Vec::with_capacity(ds.n_features());
    for (j, col) in source.columns().into_iter().enumerate() {
        let m = col.sum() / n;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if !(s > 1e-12 * m.abs().max(1.0)) {
            return Err(Error::DegenerateFeature(j));
        }
        mean.push(m);
        std.push(s);
    }
    let stats = Standardization { mean, std };
    Ok((stats.apply(ds)?, stats))
}

/// Which partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Spatial block of every sample (row order). For random row splits each
    /// row is its own block.
    pub block_ids: Vec<u64>,
    pub block_side_km: f64,
    pub seed: u64,
}

impl SplitAssignment {
    /// Label of every row, in row order.
    pub fn labels(&self) -> Vec<SplitLabel> {
        let mut labels = vec![SplitLabel::Test; self.block_ids.len()];
        for &i in &self.train_idx {
            labels[i] = SplitLabel::Train;
        }
        for &i in &self.val_idx {
            labels[i] = SplitLabel::Val;
        }
        labels
    }

    /// The train, validation and test subsets of `ds`, in that order.
    pub fn apply(&self, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        if ds.n_samples() != self.block_ids.len() {
            return Err(Error::ShapeError(format!(
                "split covers {} rows, dataset has {}",
                self.block_ids.len(),
                ds.n_samples()
            )));
        }
        Ok((ds.select(&self.train_idx)?, ds.select(&self.val_idx)?, ds.select(&self.test_idx)?))
    }

    /// CSV with columns `row_index,split,block_id`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("row_index,split,block_id\n");
        for (i, (label, block)) in self.labels().iter().zip(&self.block_ids).enumerate() {
            out.push_str(&format!("{i},{},{block}\n", label.as_str()));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// The equal-area-ish tiling of the sphere used by [`spatial_block_split`].
///
/// Latitude bands are `block_side_km` tall; a band centred at latitude φ is
/// cut into `floor(360 cos φ / band_height_deg)` equal longitude cells (at
/// least one).
#[derive(Debug, Clone)]
pub struct BlockGrid {
    band_height_deg: f64,
    cells_per_band: Vec<u64>,
    band_offset: Vec<u64>,
}

impl BlockGrid {
    pub fn new(block_side_km: f64) -> Result<Self> {
        if !(block_side_km > 0.0 && block_side_km.is_finite()) {
            return Err(Error::InvalidBlockSize(block_side_km));
        }
        let band_height_deg = (block_side_km / EARTH_RADIUS_KM).to_degrees().min(180.0);
        let n_bands = (180.0 / band_height_deg).ceil() as usize;
        let mut cells_per_band = Vec::with_capacity(n_bands);
        let mut band_offset = Vec::with_capacity(n_bands);
        let mut offset = 0u64;
        for b in 0..n_bands {
            let center = (-90.0 + (b as f64 + 0.5) * band_height_deg).min(90.0);
            let cells = ((360.0 * center.to_radians().cos()) / band_height_deg).floor();
            let cells = (cells as u64).max(1);
            band_offset.push(offset);
            cells_per_band.push(cells);
            offset += cells;
        }
        Ok(Self {
            band_height_deg,
            cells_per_band,
            band_offset,
        })
    }

    pub fn n_blocks(&self) -> u64 {
        self.band_offset.last().copied().unwrap_or(0) + self.cells_per_band.last().copied().unwrap_or(0)
    }

    fn band_of(&self, lat: f64) -> usize {
        let b = ((lat + 90.0) / self.band_height_deg).floor() as usize;
        b.min(self.cells_per_band.len() - 1)
    }

    pub fn block_id(&self, g: GeoCoord) -> u64 {
        let band = self.band_of(g.lat);
        let cells = self.cells_per_band[band];
        let frac = ((g.lon + 180.0) / 360.0).clamp(0.0, 1.0);
        let cell = ((frac * cells as f64).floor() as u64).min(cells - 1);
        self.band_offset[band] + cell
    }

    /// Spherical area of a block in km².
    pub fn block_area(&self, id: u64) -> f64 {
        let band = match self.band_offset.binary_search(&id) {
            Ok(b) => b,
            Err(b) => b - 1,
        };
        let lo = (-90.0 + band as f64 * self.band_height_deg).max(-90.0);
        let hi = (lo + self.band_height_deg).min(90.0);
        let zone = 2.0 * PI * EARTH_RADIUS_KM * EARTH_RADIUS_KM * (hi.to_radians().sin() - lo.to_radians().sin());
        zone / self.cells_per_band[band] as f64
    }
}

/// Geography-aware split: whole spatial blocks are assigned to train (by
/// area, in seeded random order) until `train_fraction` of the occupied area
/// is reached; remaining blocks go to validation until `val_fraction` is
/// reached, and the rest to test.
pub fn spatial_block_split(
    ds: &Dataset,
    block_side_km: f64,
    seed: u64,
    train_fraction: f64,
    val_fraction: f64,
) -> Result<SplitAssignment> {
    let coords = ds.coords().ok_or(Error::NoCoordinates)?;
    let grid = BlockGrid::new(block_side_km)?;
    check_fractions(train_fraction, val_fraction)?;

    let block_ids: Vec<u64> = coords.iter().map(|&g| grid.block_id(g)).collect();
    // BTreeSet: the shuffle input depends only on which blocks are occupied
    let occupied: Vec<u64> = block_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut order = occupied.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total_area: f64 = occupied.iter().map(|&b| grid.block_area(b)).sum();
    let train_target = train_fraction * total_area;
    let val_target = val_fraction * total_area;
    let mut label_of = BTreeMap::new();
    let (mut train_area, mut val_area) = (0.0, 0.0);
    for &b in &order {
        let area = grid.block_area(b);
        let label = if train_area < train_target {
            train_area += area;
            SplitLabel::Train
        } else if val_area < val_target {
            val_area += area;
            SplitLabel::Val
        } else {
            SplitLabel::Test
        };
        label_of.insert(b, label);
    }

    let mut split = SplitAssignment {
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        test_idx: Vec::new(),
        block_ids: Vec::new(),
        block_side_km,
        seed,
    };
    for (i, b) in block_ids.iter().enumerate() {
        match label_of[b] {
            SplitLabel::Train => split.train_idx.push(i),
            SplitLabel::Val => split.val_idx.push(i),
            SplitLabel::Test => split.test_idx.push(i),
        }
    }
    split.block_ids = block_ids;
    Ok(split)
}

/// Seeded random row split for data without coordinates.
pub fn random_split(
    n_samples: usize,
    seed: u64,
    train_fraction: f64,
    val_fraction: f64,
) -> Result<SplitAssignment> {
    check_fractions(train_fraction, val_fraction)?;
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n_samples as f64).round() as usize;
    let n_val = (val_fraction * n_samples as f64).round() as usize;
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..n_train + n_val].to_vec();
    let mut test_idx = order[n_train + n_val..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitAssignment {
        train_idx,
        val_idx,
        test_idx,
        block_ids: (0..n_samples as u64).collect(),
        block_side_km: 0.0,
        seed,
    })
}

fn check_fractions(train: f64, val: f64) -> Result<()> {
    if !(train > 0.0 && train < 1.0 && val > 0.0 && val < 1.0 - train) {
        return Err(Error::InvalidFractions { train, val });
    }
    Ok(())
}

/// Result of [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Rows dropped for missing or non-finite values.
    pub dropped_rows: usize,
}

/// Reads a header-first numeric CSV. Leading `lon`,`lat` columns, when
/// present, become coordinates. Rows with missing or non-finite values are
/// dropped.
pub fn load_csv(path: &Path) -> Result<CsvLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let has_coords = headers.len() >= 2
        && headers[0].eq_ignore_ascii_case("lon")
        && headers[1].eq_ignore_ascii_case("lat");
    let first_feature = if has_coords { 2 } else { 0 };
    let feature_names = headers[first_feature..].to_vec();
    if feature_names.is_empty() {
        return Err(parse_error(1, "no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut coords = Vec::new();
    let mut dropped_rows = 0;
    let mut row = Vec::with_capacity(headers.len());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        row.clear();
        let mut missing = false;
        for field in record.iter() {
            let field = field.trim();
            if field.is_empty() {
                missing = true;
                row.push(f64::NAN);
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(line, format!("not a number: {field:?}")))?;
            row.push(v);
        }
        if missing || row.iter().any(|v| !v.is_finite()) {
            dropped_rows += 1;
            continue;
        }
        if has_coords {
            let lat = row[1];
            if !(-90.0..=90.0).contains(&lat) {
                return Err(parse_error(line, format!("latitude {lat} out of range")));
            }
            let lon = (row[0] + 180.0).rem_euclid(360.0) - 180.0;
            coords.push(GeoCoord { lon, lat });
        }
        values.extend_from_slice(&row[first_feature..]);
    }
    let d = feature_names.len();
    let n = values.len() / d;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let samples = Array2::from_shape_vec((n, d), values).expect("row lengths checked by csv reader");
    let dataset = Dataset::new(samples, feature_names, has_coords.then_some(coords))?;
    Ok(CsvLoad {
        dataset,
        dropped_rows,
    })
}

/// Writes a dataset in the format read by [`load_csv`].
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<&str> = Vec::new();
    if ds.coords.is_some() {
        header.extend(["lon", "lat"]);
    }
    header.extend(ds.feature_names.iter().map(String::as_str));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in ds.samples.rows().into_iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        if let Some(c) = &ds.coords {
            fields.push(c[i].lon.to_string());
            fields.push(c[i].lat.to_string());
        }
        fields.extend(row.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_error(line: u64, message: String) -> Error {
    Error::ParseError { line, message }
}
