//! Flat TOML run configuration. Every key is optional in the file; command
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkConfig, Method, DEFAULT_KNN_K};
use crate::dataset::{Mechanism, MissingSpec};
use crate::imputer::{ImputeOptions, SamplerMode};
use crate::masking::{PerturbStrengths, StrengthRule};
use crate::numeric::Precision;
use crate::schedule::ScheduleKind;
use crate::trainer::TrainConfig;

use super::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed for masking, training and imputation.
    pub seed: u64,

    // missingness simulation
    pub mechanism: Mechanism,
    pub ratio: f64,

    // training
    pub steps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub layers: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub remask: f64,
    pub strengths: PerturbStrengths,
    pub strength_rule: StrengthRule,
    pub augment: bool,
    pub batch: usize,
    pub schedule: ScheduleKind,
    pub precision: Precision,

    // imputation
    pub mode: SamplerMode,
    pub zero_noise: bool,
    /// Imputations averaged per output; 1 disables the spread sidecar.
    pub ensemble: usize,

    // benchmark
    pub datasets: Vec<String>,
    pub methods: Vec<Method>,
    /// Number of benchmark seeds, `seed..seed + repeats`.
    pub repeats: u64,
    pub knn_k: usize,

    /// Extra token read as missing besides the empty cell.
    pub null_token: String,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::default();
        let bench = BenchmarkConfig::default();
        Self {
            seed: 0,
            mechanism: Mechanism::Mcar,
            ratio: 0.3,
            steps: train.steps,
            epochs: train.epochs,
            lr: train.lr,
            layers: train.layers,
            hidden: train.hidden,
            gamma: train.gamma,
            remask: train.remask,
            strengths: train.strengths,
            strength_rule: train.strength_rule,
            augment: train.augment,
            batch: train.batch,
            schedule: train.schedule,
            precision: train.precision,
            mode: SamplerMode::default(),
            zero_noise: false,
            ensemble: 1,
            datasets: bench.datasets,
            methods: bench.methods,
            repeats: bench.seeds.len() as u64,
            knn_k: DEFAULT_KNN_K,
            null_token: String::new(),
        }
    }
}

impl Config {
    /// Defaults, or the given TOML file on top of them.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            epochs: self.epochs,
            lr: self.lr,
            layers: self.layers,
            hidden: self.hidden,
            gamma: self.gamma,
            remask: self.remask,
            strengths: self.strengths,
            strength_rule: self.strength_rule,
            augment: self.augment,
            batch: self.batch,
            seed: self.seed,
            schedule: self.schedule,
            precision: self.precision,
        }
    }

    pub fn missing(&self) -> crate::Result<MissingSpec> {
        MissingSpec::new(self.mechanism, self.ratio, self.seed)
    }

    pub fn impute(&self) -> ImputeOptions {
        ImputeOptions {
            mode: self.mode,
            zero_noise: self.zero_noise,
        }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            datasets: self.datasets.clone(),
            methods: self.methods.clone(),
            mechanism: self.mechanism,
            ratio: self.ratio,
            seeds: (self.seed..self.seed + self.repeats).collect(),
            knn_k: self.knn_k,
            train: self.train(),
            impute: self.impute(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.missing()?;
        self.train().validate()?;
        if self.ensemble == 0 {
            return Err(crate::Error::InvalidArgument(
                "ensemble must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Config echo written next to every output artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Meta<'a> {
    pub command: &'static str,
    pub version: &'static str,
    pub inputs: Vec<String>,
    pub config: &'a Config,
}

impl<'a> Meta<'a> {
    pub fn new(command: &'static str, inputs: &[&Path], config: &'a Config) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config,
        }
    }

    /// Writes `<artifact>.meta.json`.
    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf, CliError> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".meta.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::from(crate::Error::from(e)))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
