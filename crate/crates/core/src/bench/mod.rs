//! Baselines, metrics, synthetic data and the benchmark harness.

mod baselines;
mod harness;
mod metrics;
mod synthetic;

pub use baselines::{knn_impute, mean_impute, DEFAULT_KNN_K};
pub use harness::{
    average_ranks, data_dir, dataset_path, resolve_dataset, run_benchmark, run_method, score,
    BenchmarkConfig, BenchmarkReport, Method, RunReport, SeedResult, DATA_DIR_ENV, SYNTHETIC_POWER,
};
pub use metrics::{categorical_error, mean_std, rmse};
pub use synthetic::{gaussian_table, power_like, POWER_COLUMNS, POWER_ROWS};
