//! Paired benchmark runs: every method sees the same masked table per seed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::{knn_impute, mean_impute, DEFAULT_KNN_K};
use super::metrics::{categorical_error, mean_std, rmse};
use super::synthetic::{power_like, POWER_ROWS};
use crate::dataset::{
    load_csv, simulate_missing, CsvOptions, Mechanism, MissingSpec, NormalizationParams,
    SimulatedMissing, Table,
};
use crate::error::{Error, Result};
use crate::imputer::{impute, ImputationResult, ImputeOptions};
use crate::trainer::{fit, TrainConfig};

pub const DATA_DIR_ENV: &str = "SIMPDM_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mean,
    Knn,
    /// Alignment and augmentation as configured.
    Simpdm,
    /// Same network with `γ = 0` and no augmentation.
    Base,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::Knn => "knn",
            Method::Simpdm => "simpdm",
            Method::Base => "base",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Method::Mean),
            "knn" => Ok(Method::Knn),
            "simpdm" => Ok(Method::Simpdm),
            "base" => Ok(Method::Base),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub datasets: Vec<String>,
    pub methods: Vec<Method>,
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub seeds: Vec<u64>,
    pub knn_k: usize,
    pub train: TrainConfig,
    pub impute: ImputeOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            datasets: vec!["iris".into()],
            methods: vec![Method::Mean, Method::Knn, Method::Simpdm],
            mechanism: Mechanism::Mcar,
            ratio: 0.3,
            seeds: (0..5).collect(),
            knn_k: DEFAULT_KNN_K,
            train: TrainConfig::default(),
            impute: ImputeOptions::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        MissingSpec::new(self.mechanism, self.ratio, 0)?;
        self.train.validate()?;
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be >= 1"));
        }
        if self.seeds.is_empty() || self.methods.is_empty() || self.datasets.is_empty() {
            return Err(Error::invalid(
                "benchmark needs datasets, methods and seeds",
            ));
        }
        Ok(())
    }
}

/// Dataset directory from the environment, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Id of the generated power-plant stand-in.
pub const SYNTHETIC_POWER: &str = "power";

/// File behind a dataset id: `<dir>/<id>.csv` when present, otherwise the id
/// read as a path.
pub fn dataset_path(id: &str, dir: &Path) -> Result<PathBuf> {
    let registered = dir.join(format!("{id}.csv"));
    let path = if registered.is_file() {
        registered
    } else {
        PathBuf::from(id)
    };
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset {id:?} not found (looked in {})", dir.display()),
        )));
    }
    Ok(path)
}

/// Maps a dataset id to a table: `power` is generated, anything else goes
/// through [`dataset_path`].
pub fn resolve_dataset(id: &str, dir: &Path) -> Result<Table> {
    if id == SYNTHETIC_POWER {
        return power_like(POWER_ROWS, 0);
    }
    load_csv(dataset_path(id, dir)?, &CsvOptions::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rmse: Option<f64>,
    pub cat_error: Option<f64>,
    pub ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub method: Method,
    pub seeds: Vec<SeedResult>,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub cat_error_mean: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub runs: Vec<RunReport>,
    /// Average RMSE rank per method across datasets (1 is best); present
    /// with two or more methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<(Method, f64)>>,
}

impl BenchmarkReport {
    pub fn run(&self, dataset: &str, method: Method) -> Option<&RunReport> {
        self.runs
            .iter()
            .find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Flat rows of `dataset,method,seed,rmse,cat_error,ms`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dataset", "method", "seed", "rmse", "cat_error", "ms"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.runs {
            for s in &r.seeds {
                out.write_record([
                    r.dataset.clone(),
                    r.method.name().to_string(),
                    s.seed.to_string(),
                    opt(s.rmse),
                    opt(s.cat_error),
                    format!("{:.3}", s.ms),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Imputes one masked table with one method.
pub fn run_method(
    method: Method,
    masked: &Table,
    seed: u64,
    cfg: &BenchmarkConfig,
) -> Result<ImputationResult> {
    match method {
        Method::Mean => mean_impute(masked),
        Method::Knn => knn_impute(masked, cfg.knn_k),
        Method::Simpdm | Method::Base => {
            let mut train = cfg.train.clone();
            if method == Method::Base {
                train = train.base_model();
            }
            train.seed = seed;
            let (ckpt, _) = fit(masked, &train)?;
            impute(&ckpt, masked, seed, cfg.impute)
        }
    }
}

/// `(rmse, categorical error)` of an imputation against the complete table,
/// both mapped to `[0, 1]` with the complete table's column ranges.
pub fn score(
    truth: &Table,
    sim: &SimulatedMissing,
    imputed: &Table,
) -> Result<(Option<f64>, Option<f64>)> {
    let scaling = NormalizationParams::fit(truth);
    Ok((
        rmse(truth, imputed, &sim.mask, &scaling)?,
        categorical_error(truth, imputed, &sim.mask)?,
    ))
}

pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    datasets: &[(String, Table)],
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let mut runs = Vec::new();
    for (name, truth) in datasets {
        let mut per_method: Vec<(Vec<SeedResult>, f64)> =
            cfg.methods.iter().map(|_| (Vec::new(), 0.0)).collect();
        for &seed in &cfg.seeds {
            let sim = simulate_missing(truth, &MissingSpec::new(cfg.mechanism, cfg.ratio, seed)?)?;
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let start = Instant::now();
                let outcome = run_method(method, &sim.table, seed, cfg)
                    .and_then(|r| score(truth, &sim, &r.table));
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let result = match outcome {
                    Ok((rmse, cat_error)) => SeedResult {
                        seed,
                        rmse,
                        cat_error,
                        ms,
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("{name}/{}/seed {seed} failed: {e}", method.name());
                        SeedResult {
                            seed,
                            rmse: None,
                            cat_error: None,
                            ms,
                            error: Some(e.to_string()),
                        }
                    }
                };
                log::info!(
                    "{name} {} seed {seed}: rmse {:?} ({ms:.0} ms)",
                    method.name(),
                    result.rmse
                );
                per_method[mi].0.push(result);
                per_method[mi].1 += ms;
            }
        }
        for (&method, (seeds, wall_ms)) in cfg.methods.iter().zip(per_method) {
            let rmses: Vec<f64> = seeds.iter().filter_map(|s| s.rmse).collect();
            let cats: Vec<f64> = seeds.iter().filter_map(|s| s.cat_error).collect();
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            runs.push(RunReport {
                dataset: name.clone(),
                mechanism: cfg.mechanism,
                ratio: cfg.ratio,
                method,
                seeds,
                rmse_mean,
                rmse_std,
                cat_error_mean: mean_std(&cats).0,
                wall_ms,
            });
        }
    }
    let ranks = (cfg.methods.len() >= 2).then(|| average_ranks(&runs, &cfg.methods));
    Ok(BenchmarkReport {
        config: cfg.clone(),
        runs,
        ranks,
    })
}

/// Ranks methods by mean RMSE within each dataset (ties share the average
/// rank, missing results rank last) and averages over datasets.
pub fn average_ranks(runs: &[RunReport], methods: &[Method]) -> Vec<(Method, f64)> {
    let mut datasets: Vec<&str> = runs.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();
    let mut totals = vec![0.0; methods.len()];
    for ds in &datasets {
        let scores: Vec<f64> = methods
            .iter()
            .map(|m| {
                runs.iter()
                    .find(|r| r.dataset == *ds && r.method == *m)
                    .and_then(|r| r.rmse_mean)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        for (i, &s) in scores.iter().enumerate() {
            let better = scores.iter().filter(|&&o| o < s).count() as f64;
            let tied = scores.iter().filter(|&&o| o == s).count() as f64;
            totals[i] += better + (tied + 1.0) / 2.0;
        }
    }
    let n = datasets.len().max(1) as f64;
    methods
        .iter()
        .zip(totals)
        .map(|(&m, t)| (m, t / n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cell, ColumnSchema};

    fn small() -> Table {
        let mut rng = crate::numeric::RngStream::new(4, 0);
        let rows = (0..40)
            .map(|_| {
                let a = rng.uniform();
                vec![
                    Cell::Num(a),
                    Cell::Num(2.0 * a + 0.05 * rng.uniform()),
                    Cell::Num(rng.uniform()),
                ]
            })
            .collect();
        Table::new(
            vec![
                ColumnSchema::numerical("a"),
                ColumnSchema::numerical("b"),
                ColumnSchema::numerical("c"),
            ],
            rows,
        )
        .unwrap()
    }

    fn cfg(methods: Vec<Method>, seeds: Vec<u64>) -> BenchmarkConfig {
        BenchmarkConfig {
            methods,
            seeds,
            train: TrainConfig {
                epochs: 2,
                hidden: 8,
                ..TrainConfig::default()
            },
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn single_cell_report() {
        let r = run_benchmark(&cfg(vec![Method::Mean], vec![1]), &[("s".into(), small())]).unwrap();
        assert_eq!(r.runs.len(), 1);
        assert_eq!(r.runs[0].seeds.len(), 1);
        assert!(r.runs[0].rmse_std.is_none());
        assert!(r.ranks.is_none());
    }

    #[test]
    fn arity_and_determinism() {
        let c = cfg(vec![Method::Mean, Method::Knn, Method::Simpdm], vec![0, 1]);
        let data = [("s".to_string(), small())];
        let a = run_benchmark(&c, &data).unwrap();
        assert_eq!(a.runs.iter().map(|r| r.seeds.len()).sum::<usize>(), 6);
        assert!(a.ranks.is_some());
        let b = run_benchmark(&c, &data).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.rmse_mean, y.rmse_mean);
        }
        let mut csv_out = Vec::new();
        a.write_csv(&mut csv_out).unwrap();
        assert_eq!(String::from_utf8(csv_out).unwrap().lines().count(), 7);
    }

    #[test]
    fn best_everywhere_ranks_first() {
        let mk = |ds: &str, m: Method, v: f64| RunReport {
            dataset: ds.into(),
            mechanism: Mechanism::Mcar,
            ratio: 0.3,
            method: m,
            seeds: vec![],
            rmse_mean: Some(v),
            rmse_std: None,
            cat_error_mean: None,
            wall_ms: 0.0,
        };
        let runs = vec![
            mk("a", Method::Mean, 0.3),
            mk("a", Method::Knn, 0.1),
            mk("b", Method::Mean, 0.5),
            mk("b", Method::Knn, 0.2),
        ];
        let ranks = average_ranks(&runs, &[Method::Mean, Method::Knn]);
        assert_eq!(ranks, vec![(Method::Mean, 2.0), (Method::Knn, 1.0)]);
    }

    #[test]
    fn unknown_dataset_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            resolve_dataset("nope", dir.path()),
            Err(Error::Io(_))
        ));
        assert_eq!(
            resolve_dataset("power", dir.path()).unwrap().n_rows(),
            POWER_ROWS
        );
    }
}
