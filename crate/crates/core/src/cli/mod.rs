//! `simpdm` command line: `simulate`, `train`, `impute`, `benchmark`.
//!
//! Exit codes: 0 ok, 1 I/O, 2 configuration, 3 numerical failure,
//! 4 schema mismatch.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{Config, Meta};

use crate::bench::Method;
use crate::dataset::Mechanism;
use crate::error::Error;
use crate::imputer::SamplerMode;
use crate::masking::StrengthRule;
use crate::numeric::Precision;
use crate::schedule::ScheduleKind;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_SCHEMA: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Csv { .. } | Error::Checkpoint(_) | Error::Json(_) => EXIT_IO,
            Error::NonFinite { .. } => EXIT_NUMERICAL,
            Error::SchemaMismatch(_) | Error::DimensionMismatch { .. } => EXIT_SCHEMA,
            Error::InvalidArgument(_)
            | Error::InvalidProbability(_)
            | Error::EmptyInput(_)
            | Error::Calibration(_) => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "simpdm",
    version,
    about = "Diffusion-based imputation for tabular data"
)]
pub struct Cli {
    /// Log progress (repeat for more detail). `RUST_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask a complete table and keep the removed values.
    Simulate(SimulateArgs),
    /// Fit the denoiser on a table with missing cells.
    Train(TrainArgs),
    /// Fill the missing cells of a table with a trained checkpoint.
    Impute(ImputeArgs),
    /// Compare imputation methods over datasets and seeds.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with run settings; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Token read as a missing cell in addition to the empty string.
    #[arg(long)]
    pub null_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct MissingArgs {
    #[arg(long)]
    pub mechanism: Option<Mechanism>,
    /// Share of cells to mask, in (0, 1).
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Diffusion steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear layers in the denoiser.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Alignment loss weight; 0 trains without alignment.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Share of observed cells remasked each iteration.
    #[arg(long)]
    pub remask: Option<f64>,
    /// Augmentation strengths for ground-truth, pseudo-missing and missing cells.
    #[arg(long, value_delimiter = ',', value_name = "GT,PM,MS")]
    pub strengths: Option<Vec<f64>>,
    #[arg(long, value_parser = by_name::<StrengthRule>)]
    pub strength_rule: Option<StrengthRule>,
    /// Turn state-dependent augmentation off.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_parser = by_name::<ScheduleKind>)]
    pub schedule: Option<ScheduleKind>,
    /// Matrix-product arithmetic: f32 or f64.
    #[arg(long, value_parser = by_name::<Precision>)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Complete CSV, or a dataset id resolved in the data directory.
    #[arg(long)]
    pub input: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub missing: MissingArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with empty cells where values are missing.
    #[arg(long)]
    pub input: PathBuf,
    /// Optional 0/1 mask CSV; must agree with the empty cells of `--input`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines loss trace; defaults to `<checkpoint>.trace.jsonl`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub mode: Option<SamplerMode>,
    /// Deterministic reverse process (no noise at any step).
    #[arg(long)]
    pub zero_noise: bool,
    /// Average this many imputations and write a spread sidecar.
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Dataset ids or CSV paths.
    #[arg(long, value_delimiter = ',')]
    pub datasets: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Seeds run: `seed..seed + repeats`.
    #[arg(long)]
    pub repeats: Option<u64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub mode: Option<SamplerMode>,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub missing: MissingArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// Parses a unit enum variant by its serialized name.
fn by_name<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut c = Config::load(self.config.as_deref())?;
        set(&mut c.seed, self.seed);
        set(&mut c.null_token, self.null_token.clone());
        Ok(c)
    }
}

impl MissingArgs {
    fn apply(&self, c: &mut Config) {
        set(&mut c.mechanism, self.mechanism);
        set(&mut c.ratio, self.ratio);
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut Config) -> Result<(), CliError> {
        set(&mut c.steps, self.steps);
        set(&mut c.epochs, self.epochs);
        set(&mut c.lr, self.lr);
        set(&mut c.layers, self.layers);
        set(&mut c.hidden, self.hidden);
        set(&mut c.gamma, self.gamma);
        set(&mut c.remask, self.remask);
        if let Some(s) = &self.strengths {
            let s: [f64; 3] = s
                .as_slice()
                .try_into()
                .map_err(|_| CliError::config("--strengths takes three values"))?;
            c.strengths = s.try_into().map_err(CliError::from)?;
        }
        set(&mut c.strength_rule, self.strength_rule);
        if self.no_augment {
            c.augment = false;
        }
        set(&mut c.batch, self.batch);
        set(&mut c.schedule, self.schedule);
        set(&mut c.precision, self.precision);
        Ok(())
    }
}

fn resolve(command: &Command) -> Result<Config, CliError> {
    let c = match command {
        Command::Simulate(a) => {
            let mut c = a.common.resolve()?;
            a.missing.apply(&mut c);
            c
        }
        Command::Train(a) => {
            let mut c = a.common.resolve()?;
            a.train.apply(&mut c)?;
            c
        }
        Command::Impute(a) => {
            let mut c = a.common.resolve()?;
            set(&mut c.mode, a.mode);
            set(&mut c.ensemble, a.ensemble);
            if a.zero_noise {
                c.zero_noise = true;
            }
            c
        }
        Command::Benchmark(a) => {
            let mut c = a.common.resolve()?;
            a.missing.apply(&mut c);
            a.train.apply(&mut c)?;
            set(&mut c.datasets, a.datasets.clone());
            set(&mut c.methods, a.methods.clone());
            set(&mut c.repeats, a.repeats);
            set(&mut c.knn_k, a.knn_k);
            set(&mut c.mode, a.mode);
            c
        }
    };
    c.validate()
        .map_err(|e| CliError::from(e).context("invalid configuration"))?;
    Ok(c)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(&cli.command)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &config),
        Command::Train(a) => commands::train(a, &config),
        Command::Impute(a) => commands::impute(a, &config),
        Command::Benchmark(a) => commands::benchmark(a, &config),
    }
}

/// Parses the process arguments, runs, and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
