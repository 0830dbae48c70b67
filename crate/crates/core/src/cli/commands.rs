use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    BenchmarkArgs, CliError, Config, ImputeArgs, Meta, SimulateArgs, TrainArgs, EXIT_NUMERICAL,
};
use crate::bench::{
    data_dir, dataset_path, power_like, resolve_dataset, run_benchmark, POWER_ROWS, SYNTHETIC_POWER,
};
use crate::dataset::{
    completed_raw, format_cell, normalize, simulate_missing, table_from_raw, table_with_schema,
    CsvOptions, RawCsv, Table,
};
use crate::denoiser::{read_checkpoint, write_checkpoint};
use crate::error::Error;
use crate::imputer;
use crate::numeric::Matrix;
use crate::trainer::{checkpoint_for, LossParts, TrainData, TrainTrace, Trainer};

fn csv_options(c: &Config) -> CsvOptions {
    CsvOptions::with_null_token(c.null_token.clone())
}

/// `path` with `suffix` appended to the full file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// `dir/stem.csv` → `dir/stem.<tag>.csv`
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn read_raw(path: &Path) -> Result<RawCsv, CliError> {
    RawCsv::read(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_raw(raw: &RawCsv, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    raw.write(path)
        .map_err(|e| CliError::from(e).context(path.display()))
}

/// Raw text for a generated table, as if it had been read from disk.
fn raw_from_table(t: &Table) -> RawCsv {
    RawCsv {
        header: t.schema().iter().map(|c| c.name.clone()).collect(),
        records: (0..t.n_rows())
            .map(|i| {
                t.schema()
                    .iter()
                    .enumerate()
                    .map(|(j, s)| format_cell(s, t.get(i, j), ""))
                    .collect()
            })
            .collect(),
    }
}

fn matrix_csv(header: &[String], m: &Matrix, cell: impl Fn(f64) -> String) -> RawCsv {
    RawCsv {
        header: header.to_vec(),
        records: (0..m.rows())
            .map(|i| m.row(i).iter().map(|&v| cell(v)).collect())
            .collect(),
    }
}

pub fn simulate(a: &SimulateArgs, c: &Config) -> Result<(), CliError> {
    let opts = csv_options(c);
    let (raw, stem, source) = if a.input == SYNTHETIC_POWER {
        let t = power_like(POWER_ROWS, 0)?;
        (
            raw_from_table(&t),
            SYNTHETIC_POWER.to_string(),
            PathBuf::from(SYNTHETIC_POWER),
        )
    } else {
        let path = dataset_path(&a.input, &data_dir())?;
        let stem = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        (read_raw(&path)?, stem, path)
    };
    let table = table_from_raw(&raw, &opts)?;
    let sim = simulate_missing(&table, &c.missing()?)?;
    log::info!(
        "masked {} of {} cells ({:.4})",
        sim.holdout.len(),
        sim.mask.rows() * sim.mask.cols(),
        sim.masked_fraction()
    );

    let masked = raw.map_cells(|i, j, v| {
        if sim.mask[(i, j)] != 0.0 {
            c.null_token.clone()
        } else {
            v.to_string()
        }
    });
    let mask = matrix_csv(&raw.header, &sim.mask, |v| format!("{}", v as u8));
    let holdout = RawCsv {
        header: vec!["row".into(), "column".into(), "value".into()],
        records: sim
            .holdout
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.row.to_string(),
                    raw.header[e.col].clone(),
                    raw.records[e.row][e.col].clone(),
                ]
            })
            .collect(),
    };
    let meta = Meta::new("simulate", &[&source], c);
    for (tag, content) in [("masked", &masked), ("mask", &mask), ("holdout", &holdout)] {
        let path = a.out_dir.join(format!("{stem}.{tag}.csv"));
        write_raw(content, &path)?;
        meta.write_for(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// Errors unless the 0/1 mask file marks exactly the empty cells of `table`.
fn check_mask(table: &Table, path: &Path) -> Result<(), CliError> {
    let raw = read_raw(path)?;
    let schema_err =
        |msg: String| CliError::from(Error::SchemaMismatch(msg)).context(path.display());
    let names: Vec<&str> = table.schema().iter().map(|c| c.name.as_str()).collect();
    if raw.header != names || raw.records.len() != table.n_rows() {
        return Err(schema_err(
            "mask header or row count differs from the input".into(),
        ));
    }
    let nulls = table.null_mask();
    for (i, rec) in raw.records.iter().enumerate() {
        for (j, v) in rec.iter().enumerate() {
            let m = match v.trim() {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(schema_err(format!("mask cell {other:?} is not 0 or 1"))),
            };
            if m != nulls[(i, j)] {
                return Err(schema_err(format!(
                    "mask disagrees with the input at row {}, column {:?}",
                    i + 2,
                    names[j]
                )));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    error: String,
    epochs_completed: usize,
    last_loss: Option<LossParts>,
    trace: String,
    config: &'a Config,
}

fn write_trace(trace: &TrainTrace, path: &Path) -> Result<(), CliError> {
    trace
        .write_jsonl(create(path)?)
        .map_err(|e| CliError::from(e).context(path.display()))
}

pub fn train(a: &TrainArgs, c: &Config) -> Result<(), CliError> {
    let raw = read_raw(&a.input)?;
    let table = table_from_raw(&raw, &csv_options(c))?;
    if let Some(mask) = &a.mask {
        check_mask(&table, mask)?;
    }
    let cfg = c.train();
    let (normalized, params) = normalize(&table)?;
    for j in params.flagged_columns() {
        log::warn!(
            "column {:?} is constant or unobserved",
            table.schema()[j].name
        );
    }
    let data = TrainData::from_normalized(&normalized)?;
    let mut trainer = Trainer::new(data.layout.clone(), &cfg)?;
    let trace_path = a
        .trace
        .clone()
        .unwrap_or_else(|| with_suffix(&a.checkpoint, ".trace.jsonl"));
    let meta = Meta::new("train", &[&a.input], c);

    if let Err(e) = trainer.run(&data) {
        if !matches!(e, Error::NonFinite { .. }) {
            return Err(e.into());
        }
        write_trace(&trainer.trace, &trace_path)?;
        let diag_path = with_suffix(&a.checkpoint, ".diagnostics.json");
        let diag = Diagnostics {
            error: e.to_string(),
            epochs_completed: trainer.trace.records.len(),
            last_loss: trainer.trace.records.last().map(|r| r.loss),
            trace: trace_path.display().to_string(),
            config: c,
        };
        let text =
            serde_json::to_string_pretty(&diag).map_err(|e| CliError::from(Error::from(e)))?;
        std::fs::write(&diag_path, text + "\n").map_err(|e| CliError::io(&diag_path, e))?;
        return Err(CliError {
            code: EXIT_NUMERICAL,
            message: format!("{e}; diagnostics written to {}", diag_path.display()),
        });
    }

    write_trace(&trainer.trace, &trace_path)?;
    meta.write_for(&trace_path)?;
    let ckpt = checkpoint_for(trainer.model, &table, params, &cfg)?;
    ensure_parent(&a.checkpoint)?;
    write_checkpoint(&ckpt, &a.checkpoint)
        .map_err(|e| CliError::from(e).context(a.checkpoint.display()))?;
    meta.write_for(&a.checkpoint)?;
    if let Some(last) = trainer.trace.records.last() {
        log::info!(
            "final loss {:.6} after {} epochs",
            last.loss.total,
            last.epoch
        );
    }
    println!("{}", a.checkpoint.display());
    Ok(())
}

pub fn impute(a: &ImputeArgs, c: &Config) -> Result<(), CliError> {
    let opts = csv_options(c);
    let ckpt = read_checkpoint(&a.checkpoint)
        .map_err(|e| CliError::from(e).context(a.checkpoint.display()))?;
    let raw = read_raw(&a.input)?;
    let table = table_with_schema(&raw, &ckpt.header.schema, &opts)?;
    let meta = Meta::new("impute", &[&a.checkpoint, &a.input], c);
    let completed = if c.ensemble == 1 {
        imputer::impute(&ckpt, &table, c.seed, c.impute())?.table
    } else {
        let seeds: Vec<u64> = (c.seed..c.seed + c.ensemble as u64).collect();
        let ens = imputer::impute_ensemble(&ckpt, &table, &seeds, c.impute())?;
        let spread_path = tagged(&a.output, "std");
        write_raw(
            &matrix_csv(&raw.header, &ens.spread, |v| format!("{v}")),
            &spread_path,
        )?;
        meta.write_for(&spread_path)?;
        ens.result.table
    };
    write_raw(&completed_raw(&raw, &completed, &opts)?, &a.output)?;
    meta.write_for(&a.output)?;
    println!("{}", a.output.display());
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs, c: &Config) -> Result<(), CliError> {
    let cfg = c.benchmark();
    let dir = data_dir();
    let datasets = cfg
        .datasets
        .iter()
        .map(|id| Ok((id.clone(), resolve_dataset(id, &dir)?)))
        .collect::<crate::Result<Vec<_>>>()?;
    let report = run_benchmark(&cfg, &datasets)?;

    let json = a.out_dir.join("report.json");
    report
        .write_json(create(&json)?)
        .map_err(|e| CliError::from(e).context(json.display()))?;
    let csv = a.out_dir.join("report.csv");
    report
        .write_csv(create(&csv)?)
        .map_err(|e| CliError::from(e).context(csv.display()))?;
    let meta = Meta::new("benchmark", &[], c);
    meta.write_for(&csv)?;

    for r in &report.runs {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let failed = r.seeds.iter().filter(|s| s.error.is_some()).count();
        println!(
            "{:<12} {:<7} rmse {} ± {}{}",
            r.dataset,
            r.method.name(),
            fmt(r.rmse_mean),
            fmt(r.rmse_std),
            if failed > 0 {
                format!("  ({failed} failed)")
            } else {
                String::new()
            }
        );
    }
    if let Some(ranks) = &report.ranks {
        for (m, rank) in ranks {
            println!("rank {:<7} {rank:.2}", m.name());
        }
    }
    Ok(())
}
