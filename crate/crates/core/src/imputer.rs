//! Reverse-diffusion imputation.
//!
//! Missing numerical cells start from `N(0, 1)`, missing categorical cells
//! from a uniform draw. At every step the observed cells are clamped back to
//! their padded values before the denoiser runs, and the final output keeps
//! every observed cell exactly as given.

use serde::{Deserialize, Serialize};

use crate::dataset::{
    argmax, average_pad, schema_hash, Cell, FeatureLayout, NormalizationParams, Table,
};
use crate::denoiser::{Checkpoint, Denoise};
use crate::error::{Error, Result};
use crate::masking::assemble_hybrid;
use crate::numeric::{Matrix, RngStream};
use crate::schedule::{multinomial_posterior, one_hot, Schedule};

/// Numerical update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    /// `x_{t-1} = c0 · x̂0 + ct · x_t + σ_t z`
    #[default]
    DdpmPosterior,
    /// `x_{t-1} = x̂0 / √α_t + σ_t z`
    RescaledEstimate,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm-posterior" => Ok(Self::DdpmPosterior),
            "rescaled-estimate" => Ok(Self::RescaledEstimate),
            other => Err(Error::invalid(format!(
                "unknown sampler mode {other:?} (expected ddpm-posterior or rescaled-estimate)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputeOptions {
    pub mode: SamplerMode,
    /// Use `z = 0` at every step, not only the last.
    pub zero_noise: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputationResult {
    /// Completed table on the original scale.
    pub table: Table,
    /// Completed encoded matrix on the normalized scale.
    pub matrix: Matrix,
    pub seeds: Vec<u64>,
    pub steps: usize,
}

/// Runs the reverse process on an encoded, average-padded matrix.
///
/// `mask` is per table column with 1 on missing cells; the result equals
/// `x0_padded` wherever `mask` is 0.
pub fn impute_matrix(
    model: &dyn Denoise,
    x0_padded: &Matrix,
    mask: &Matrix,
    sched: &Schedule,
    seed: u64,
    opts: ImputeOptions,
) -> Result<Matrix> {
    let layout = model.layout();
    let n = x0_padded.rows();
    if x0_padded.cols() != layout.width() || mask.shape() != (n, layout.n_columns()) {
        return Err(Error::SchemaMismatch(format!(
            "imputation input {:?} / mask {:?} does not fit the model layout",
            x0_padded.shape(),
            mask.shape()
        )));
    }
    if sched.steps() != model.steps() {
        return Err(Error::invalid(format!(
            "schedule has {} steps, model was trained with {}",
            sched.steps(),
            model.steps()
        )));
    }
    let m_enc = layout.expand(mask)?;
    if m_enc.sum() == 0.0 {
        return Ok(x0_padded.clone());
    }
    let mut rng = RngStream::derive(seed, "impute", 0, 0);

    let mut x = x0_padded.clone();
    for i in 0..n {
        for (j, pos) in layout.numerical_columns() {
            if mask[(i, j)] != 0.0 {
                x[(i, pos)] = rng.standard_normal();
            }
        }
        for (j, offset, k, _) in layout.categorical() {
            if mask[(i, j)] != 0.0 {
                let c = rng.uniform_index(k);
                x.row_mut(i)[offset..offset + k].copy_from_slice(&one_hot(c, k));
            }
        }
    }

    for t in (1..=sched.steps()).rev() {
        let x_tilde = assemble_hybrid(x0_padded, &x, &m_enc)?;
        let pred = model.predict(&x_tilde, &vec![t; n], mask)?;
        if !pred.is_finite() {
            return Err(Error::NonFinite {
                stage: "imputation".into(),
                step: t,
            });
        }
        let x0_hat = pred.to_encoded(layout);
        let (c0, ct) = sched.posterior_mean_coefs(t);
        let sigma = sched.sigma(t);
        let noisy = t > 1 && !opts.zero_noise;
        let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
        for i in 0..n {
            for (j, pos) in layout.numerical_columns() {
                if mask[(i, j)] == 0.0 {
                    continue;
                }
                let mean = match opts.mode {
                    SamplerMode::DdpmPosterior => c0 * x0_hat[(i, pos)] + ct * x_tilde[(i, pos)],
                    SamplerMode::RescaledEstimate => inv_sqrt_alpha * x0_hat[(i, pos)],
                };
                let z = if noisy { rng.standard_normal() } else { 0.0 };
                x[(i, pos)] = mean + sigma * z;
            }
            for (j, offset, k, _) in layout.categorical() {
                if mask[(i, j)] == 0.0 {
                    continue;
                }
                let probs = &x0_hat.row(i)[offset..offset + k];
                let c = if noisy {
                    let post = multinomial_posterior(
                        &x_tilde.row(i)[offset..offset + k],
                        probs,
                        t,
                        sched,
                    )?;
                    rng.sample_categorical(&post)?
                } else {
                    argmax(probs)
                };
                x.row_mut(i)[offset..offset + k].copy_from_slice(&one_hot(c, k));
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                stage: "imputation".into(),
                step: t,
            });
        }
    }
    assemble_hybrid(x0_padded, &x, &m_enc)
}

/// Decodes a completed normalized matrix, copying observed cells of
/// `original` verbatim and de-normalizing the rest.
pub fn complete_table(
    original: &Table,
    completed: &Matrix,
    layout: &FeatureLayout,
    normalization: &NormalizationParams,
) -> Result<Table> {
    let decoded = layout.decode(completed, original.schema())?;
    let rows = (0..original.n_rows())
        .map(|i| {
            (0..original.n_cols())
                .map(|j| match original.get(i, j) {
                    Cell::Null => match decoded.get(i, j) {
                        Cell::Num(v) => Cell::Num(normalization.columns[j].inverse(v)),
                        other => other,
                    },
                    observed => observed,
                })
                .collect()
        })
        .collect();
    Table::new(original.schema().to_vec(), rows)
}

/// Imputes the null cells of a raw-scale table with a trained checkpoint.
pub fn impute(
    ckpt: &Checkpoint,
    table: &Table,
    seed: u64,
    opts: ImputeOptions,
) -> Result<ImputationResult> {
    let prepared = Prepared::new(ckpt, table)?;
    let matrix = prepared.run(ckpt, seed, opts)?;
    let completed = complete_table(
        table,
        &matrix,
        &ckpt.model.layout,
        &ckpt.header.normalization,
    )?;
    Ok(ImputationResult {
        table: completed,
        matrix,
        seeds: vec![seed],
        steps: ckpt.model.arch.steps,
    })
}

struct Prepared {
    padded: Matrix,
    mask: Matrix,
    sched: Schedule,
}

impl Prepared {
    fn new(ckpt: &Checkpoint, table: &Table) -> Result<Self> {
        if schema_hash(table.schema()) != ckpt.schema_hash() {
            return Err(Error::SchemaMismatch(
                "input table schema differs from the checkpoint".into(),
            ));
        }
        let normalized = ckpt.header.normalization.apply(table)?;
        let mask = table.null_mask();
        let padded = average_pad(&normalized, &mask)?.matrix;
        let sched = Schedule::new(ckpt.model.arch.steps, ckpt.model.arch.schedule)?;
        Ok(Self {
            padded,
            mask,
            sched,
        })
    }

    fn run(&self, ckpt: &Checkpoint, seed: u64, opts: ImputeOptions) -> Result<Matrix> {
        impute_matrix(
            &ckpt.model,
            &self.padded,
            &self.mask,
            &self.sched,
            seed,
            opts,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    /// Averaged numerical cells, majority-voted categorical cells.
    pub result: ImputationResult,
    /// Per table cell: population std on the normalized scale for numerical
    /// columns, share of runs disagreeing with the vote for categorical ones.
    /// Zero on observed cells.
    pub spread: Matrix,
    pub runs: Vec<Matrix>,
}

/// Combines encoded runs: mean for numerical, vote for categorical.
pub fn combine_runs(
    runs: &[Matrix],
    mask: &Matrix,
    layout: &FeatureLayout,
) -> Result<(Matrix, Matrix)> {
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("ensemble needs at least one run"))?;
    let (n, k_runs) = (first.rows(), runs.len() as f64);
    let mut combined = first.clone();
    let mut spread = Matrix::zeros(n, layout.n_columns());
    for i in 0..n {
        for (j, pos) in layout.numerical_columns() {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            let mean = runs.iter().map(|r| r[(i, pos)]).sum::<f64>() / k_runs;
            let var = runs
                .iter()
                .map(|r| (r[(i, pos)] - mean).powi(2))
                .sum::<f64>()
                / k_runs;
            combined[(i, pos)] = mean;
            spread[(i, j)] = var.sqrt();
        }
        for (j, offset, k, _) in layout.categorical() {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            let mut votes = vec![0usize; k];
            for r in runs {
                votes[argmax(&r.row(i)[offset..offset + k])] += 1;
            }
            let winner = votes
                .iter()
                .enumerate()
                .fold(0, |best, (c, &v)| if v > votes[best] { c } else { best });
            combined.row_mut(i)[offset..offset + k].copy_from_slice(&one_hot(winner, k));
            spread[(i, j)] = 1.0 - votes[winner] as f64 / k_runs;
        }
    }
    Ok((combined, spread))
}

/// Imputes once per seed and combines the runs.
pub fn impute_ensemble(
    ckpt: &Checkpoint,
    table: &Table,
    seeds: &[u64],
    opts: ImputeOptions,
) -> Result<EnsembleResult> {
    if seeds.is_empty() {
        return Err(Error::invalid("ensemble needs at least one seed"));
    }
    let prepared = Prepared::new(ckpt, table)?;
    let runs = seeds
        .iter()
        .map(|&s| prepared.run(ckpt, s, opts))
        .collect::<Result<Vec<_>>>()?;
    let (matrix, spread) = combine_runs(&runs, &prepared.mask, &ckpt.model.layout)?;
    let completed = complete_table(
        table,
        &matrix,
        &ckpt.model.layout,
        &ckpt.header.normalization,
    )?;
    Ok(EnsembleResult {
        result: ImputationResult {
            table: completed,
            matrix,
            seeds: seeds.to_vec(),
            steps: ckpt.model.arch.steps,
        },
        spread,
        runs,
    })
}
