//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::report::config::RunConfig;
use crate::report::stages;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const THREADS_ENV: &str = "COLLAPSE_SCOPE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "collapse-scope", version, about = "Collapse spectroscopy for linear Gaussian beta-VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic Gaussian data to data.csv
    GenData(Flags),
    /// Write the train/val/test assignment to split.csv
    Split(Flags),
    /// Write test- and training-split PCA spectra (spectrum.csv, spectrum_train.csv)
    Pca(Flags),
    /// Train the temperature scan and write scan.csv and checkpoints
    Scan(Flags),
    /// Fit collapse thresholds from scan.csv into collapse.csv
    Fit(Flags),
    /// Measure truncation utilities into utility.csv
    Utility(Flags),
    /// Join thresholds, utilities and PCA weights into duality.csv/json
    Duality(Flags),
    /// Write closed-form predictions to prediction.csv without training
    Predict(Flags),
    /// Render the four SVG figures
    Figures(Flags),
    /// Run every stage
    All(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// Flat key = value configuration file; flags take precedence
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Comma-separated eigenvalues for synthetic data
    #[arg(long, allow_hyphen_values = true)]
    spectrum: Option<String>,
    /// Number of synthetic samples
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Tabular data file (optional leading lon,lat columns)
    #[arg(long)]
    csv: Option<String>,
    /// Latent dimension
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    t_min: Option<String>,
    #[arg(long)]
    points_per_decade: Option<String>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    max_updates: Option<String>,
    /// Early-stopping patience as a fraction of max-updates
    #[arg(long)]
    patience: Option<String>,
    /// Spatial block side in km
    #[arg(long)]
    block_km: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    val_frac: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Use the default temperature range even if the config sets one
    #[arg(long)]
    grid_default: bool,
}

impl Flags {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("spectrum", &self.spectrum),
            ("n", &self.n),
            ("seed", &self.seed),
            ("csv", &self.csv),
            ("m", &self.m),
            ("t-max", &self.t_max),
            ("t-min", &self.t_min),
            ("points-per-decade", &self.points_per_decade),
            ("lr", &self.lr),
            ("max-updates", &self.max_updates),
            ("patience", &self.patience),
            ("block-km", &self.block_km),
            ("train-frac", &self.train_frac),
            ("val-frac", &self.val_frac),
            ("out", &self.out),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn config(&self) -> Result<RunConfig, Error> {
        let text = match &self.config {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
            None => None,
        };
        let mut cfg = RunConfig::from_sources(text.as_deref(), &self.overrides())?;
        if self.grid_default {
            cfg.t_max = None;
            cfg.t_min = None;
        }
        Ok(cfg)
    }
}

/// Errors caused by the inputs rather than by a failing computation.
fn is_validation(e: &Error) -> bool {
    match e {
        Error::InvalidSpectrum(_)
        | Error::InvalidDataset(_)
        | Error::DegenerateFeature(_)
        | Error::NoCoordinates
        | Error::InvalidBlockSize(_)
        | Error::InvalidFractions { .. }
        | Error::ParseError { .. }
        | Error::EmptyDataset
        | Error::TooFewSamples { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidGrid(_)
        | Error::InvalidTau(_)
        | Error::Csv(_)
        | Error::Json(_) => true,
        Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
        _ => false,
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, Error> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))
}

fn run(command: Command, stdout: &mut dyn Write) -> Result<(), Error> {
    let report_files = |out: &mut dyn Write, files: &[std::path::PathBuf]| {
        for f in files {
            let _ = writeln!(out, "wrote {}", f.display());
        }
    };
    match command {
        Command::GenData(f) => report_files(stdout, &stages::gen_data(&f.config()?)?),
        Command::Split(f) => report_files(stdout, &stages::split(&f.config()?)?),
        Command::Pca(f) => report_files(stdout, &stages::pca(&f.config()?)?),
        Command::Scan(f) => {
            let cfg = f.config()?;
            cfg.source()?;
            let files = thread_pool()?.install(|| stages::scan(&cfg))?;
            report_files(stdout, &files)
        }
        Command::Fit(f) => report_files(stdout, &stages::fit(&f.config()?)?),
        Command::Utility(f) => report_files(stdout, &stages::utility(&f.config()?)?),
        Command::Duality(f) => {
            let (files, report) = stages::duality(&f.config()?)?;
            report_files(stdout, &files);
            print_summary(stdout, &report);
        }
        Command::Predict(f) => report_files(stdout, &stages::predict(&f.config()?)?),
        Command::Figures(f) => report_files(stdout, &stages::figures(&f.config()?)?),
        Command::All(f) => {
            let cfg = f.config()?;
            cfg.source()?;
            let (files, report) = thread_pool()?.install(|| stages::all(&cfg))?;
            report_files(stdout, &files);
            print_summary(stdout, &report);
        }
    }
    Ok(())
}

fn print_summary(out: &mut dyn Write, report: &crate::scan::DualityReport) {
    let s = &report.summary;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(out, "reliable ranks: {} of {}", s.n_reliable, s.n_ranks);
    let _ = writeln!(out, "max duality deviation: {}", fmt(s.max_deviation));
    let _ = writeln!(out, "median duality deviation: {}", fmt(s.median_deviation));
    let _ = writeln!(out, "max threshold deviation from PCA: {}", fmt(s.max_threshold_vs_pca));
    let _ = writeln!(out, "max utility deviation from PCA: {}", fmt(s.max_utility_vs_pca));
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_VALIDATION
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(stderr, "  caused by: {s}");
                source = s.source();
            }
            if is_validation(&e) {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
