//! Run configuration: a flat `key = value` file with command-line overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::trainer::{BatchSize, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Synthetic Gaussian data with these eigenvalues.
    Spectrum(Vec<f64>),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spectrum: Option<Vec<f64>>,
    pub csv: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub m: usize,
    pub t_max: Option<f64>,
    pub t_min: Option<f64>,
    pub points_per_decade: usize,
    pub train: TrainConfig,
    pub block_km: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub out: PathBuf,
    pub figures: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spectrum: None,
            csv: None,
            n: 4096,
            seed: 0,
            m: 16,
            t_max: None,
            t_min: None,
            points_per_decade: crate::scan::DEFAULT_POINTS_PER_DECADE,
            train: TrainConfig::desk(),
            block_km: 500.0,
            train_frac: 0.62,
            val_frac: 0.19,
            out: PathBuf::from("out"),
            figures: true,
        }
    }
}

fn invalid(key: &str, value: &str, expected: &str) -> Error {
    Error::InvalidConfig(format!("{key}: cannot parse {value:?} as {expected}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.trim().parse().map_err(|_| invalid(key, value, expected))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(key, value, "a boolean")),
    }
}

pub fn parse_spectrum(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse::<f64>("spectrum", v, "a comma-separated list of numbers"))
        .collect()
}

/// Parses `key = value` lines. `#` and `;` start comments, `[section]`
/// headers are ignored, keys are case-insensitive and `_` equals `-`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ParseError {
            line: i as u64 + 1,
            message: format!("expected key = value, found {line:?}"),
        })?;
        out.insert(normalize_key(key), value.trim().to_string());
    }
    Ok(out)
}

pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        match k {
            "spectrum" => self.spectrum = Some(parse_spectrum(value)?),
            "csv" => self.csv = Some(PathBuf::from(value.trim())),
            "n" => self.n = parse(k, value, "an integer")?,
            "seed" => {
                self.seed = parse(k, value, "an integer")?;
                self.train.seed = self.seed;
            }
            "m" => self.m = parse(k, value, "an integer")?,
            "t-max" => self.t_max = Some(parse(k, value, "a number")?),
            "t-min" => self.t_min = Some(parse(k, value, "a number")?),
            "points-per-decade" => self.points_per_decade = parse(k, value, "an integer")?,
            "lr" | "learning-rate" => self.train.learning_rate = parse(k, value, "a number")?,
            "max-updates" => self.train.max_updates = parse(k, value, "an integer")?,
            "patience" | "patience-fraction" => self.train.patience_fraction = parse(k, value, "a number")?,
            "batch-size" => {
                self.train.batch_size = if value.trim().eq_ignore_ascii_case("full") {
                    BatchSize::Full
                } else {
                    BatchSize::Minibatch(parse(k, value, "an integer or FULL")?)
                }
            }
            "init-scale" => self.train.init_scale = parse(k, value, "a number")?,
            "dec-var" => self.train.dec_var = parse(k, value, "a number")?,
            "warm-start" => self.train.warm_start = parse_bool(k, value)?,
            "block-km" => self.block_km = parse(k, value, "a number")?,
            "train-frac" => self.train_frac = parse(k, value, "a number")?,
            "val-frac" => self.val_frac = parse(k, value, "a number")?,
            "out" => self.out = PathBuf::from(value.trim()),
            "figures" => self.figures = parse_bool(k, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, then the file entries, then `overrides` in order.
    pub fn from_sources(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file_text {
            for (k, v) in parse_config_text(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig("n must be at least 2".into()));
        }
        if self.points_per_decade == 0 {
            return Err(Error::InvalidConfig("points-per-decade must be at least 1".into()));
        }
        if let Some(s) = &self.spectrum {
            if s.is_empty() || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidSpectrum("spectrum entries must be positive".into()));
            }
        }
        if let (Some(hi), Some(lo)) = (self.t_max, self.t_min) {
            if !(hi > lo && lo > 0.0) {
                return Err(Error::InvalidGrid(format!("need t-max > t-min > 0, got {hi} and {lo}")));
            }
        }
        if !(self.block_km > 0.0) {
            return Err(Error::InvalidBlockSize(self.block_km));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(Error::InvalidFractions {
                train: self.train_frac,
                val: self.val_frac,
            });
        }
        Ok(())
    }

    /// The single configured data source.
    pub fn source(&self) -> Result<DataSource> {
        match (&self.spectrum, &self.csv) {
            (Some(s), None) => Ok(DataSource::Spectrum(s.clone())),
            (None, Some(p)) => Ok(DataSource::Csv(p.clone())),
            (None, None) => Err(Error::InvalidConfig(
                "no data source: pass --spectrum for synthetic data or --csv for a data file".into(),
            )),
            (Some(_), Some(_)) => Err(Error::InvalidConfig("set only one of --spectrum and --csv".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let text = "# run\n[data]\nspectrum = 4,2,1,1\nn=1000 ; samples\nMAX_UPDATES = 50\n";
        let cfg = RunConfig::from_sources(Some(text), &[("n".into(), "2000".into())]).unwrap();
        assert_eq!(cfg.spectrum, Some(vec![4.0, 2.0, 1.0, 1.0]));
        assert_eq!(cfg.n, 2000);
        assert_eq!(cfg.train.max_updates, 50);
        assert_eq!(cfg.source().unwrap(), DataSource::Spectrum(vec![4.0, 2.0, 1.0, 1.0]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_sources(Some("bogus = 1"), &[]).is_err());
        assert!(RunConfig::from_sources(Some("no equals sign"), &[]).is_err());
        assert!(RunConfig::from_sources(None, &[("lr".into(), "fast".into())]).is_err());
        assert!(RunConfig::from_sources(None, &[("train-frac".into(), "0.9".into())]).is_err());
        let both = RunConfig::from_sources(None, &[("spectrum".into(), "1".into()), ("csv".into(), "x.csv".into())]).unwrap();
        assert!(both.source().is_err());
        assert!(RunConfig::default().source().is_err());
    }
}
