//! Missingness simulation: MCAR, logistic MAR, and self-masking MNAR.
//!
//! MAR keeps 30% of the columns fully observed and masks the rest through a
//! logistic model on the observed columns. MNAR masks each cell through a
//! logistic function of its own value. In both cases the per-column bias is
//! found by bisection so that the expected global masked fraction equals the
//! requested ratio.

use serde::{Deserialize, Serialize};

use super::table::{Cell, Table};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix, RngStream};

/// Fraction of columns kept fully observed under MAR.
pub const MAR_OBSERVED_FRACTION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::str::FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(Error::invalid(format!("unknown mechanism '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub seed: u64,
}

impl MissingSpec {
    pub fn new(mechanism: Mechanism, ratio: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            mechanism,
            ratio,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!(
                "missing ratio {} must lie in (0, 1)",
                self.ratio
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoldoutEntry {
    pub row: usize,
    pub col: usize,
    pub value: Cell,
}

/// Original values of the masked cells, in row-major order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthHoldout {
    pub entries: Vec<HoldoutEntry>,
}

impl GroundTruthHoldout {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the held-out values back into a masked table.
    pub fn restore(&self, masked: &Table) -> Result<Table> {
        let mut t = masked.clone();
        for e in &self.entries {
            t.set(e.row, e.col, e.value)?;
        }
        t.rescan_ranges();
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedMissing {
    pub table: Table,
    /// `1` where a cell was masked.
    pub mask: Matrix,
    pub holdout: GroundTruthHoldout,
}

impl SimulatedMissing {
    pub fn masked_fraction(&self) -> f64 {
        let cells = self.mask.rows() * self.mask.cols();
        if cells == 0 {
            0.0
        } else {
            self.mask.sum() / cells as f64
        }
    }
}

pub fn simulate_missing(table: &Table, spec: &MissingSpec) -> Result<SimulatedMissing> {
    spec.validate()?;
    if table.count_nulls() > 0 {
        return Err(Error::invalid(
            "missingness simulation needs a complete table (found nulls)",
        ));
    }
    let (n, d) = (table.n_rows(), table.n_cols());
    let mut rng = RngStream::derive(spec.seed, "simulate-missing", 0, 0);
    let mask = match spec.mechanism {
        Mechanism::Mcar => rng.sample_bernoulli(&Matrix::filled(n, d, spec.ratio))?,
        Mechanism::Mar => mar_mask(table, spec.ratio, &mut rng)?,
        Mechanism::Mnar => mnar_mask(table, spec.ratio, &mut rng)?,
    };

    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..d {
            if mask[(i, j)] != 0.0 {
                entries.push(HoldoutEntry {
                    row: i,
                    col: j,
                    value: table.get(i, j),
                });
            }
        }
    }
    let mut masked = table.with_nulls(&mask)?;
    masked.rescan_ranges();
    Ok(SimulatedMissing {
        table: masked,
        mask,
        holdout: GroundTruthHoldout { entries },
    })
}

/// Cell values mapped to `[0, 1]` for use as logistic covariates.
fn covariates(table: &Table) -> Matrix {
    let (n, d) = (table.n_rows(), table.n_cols());
    let mut x = Matrix::zeros(n, d);
    for j in 0..d {
        let col = &table.schema()[j];
        match col.cardinality() {
            None => {
                let vals: Vec<f64> = table.column(j).filter_map(|c| c.as_num()).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = if hi > lo { hi - lo } else { 1.0 };
                for i in 0..n {
                    x[(i, j)] = table.get(i, j).as_num().map_or(0.0, |v| (v - lo) / span);
                }
            }
            Some(k) => {
                for i in 0..n {
                    x[(i, j)] = table.get(i, j).as_cat().map_or(0.0, |c| c as f64) / (k - 1) as f64;
                }
            }
        }
    }
    x
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Bias `b` such that `mean(sigmoid(logits + b)) = target`.
fn calibrate_bias(logits: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!(
            "per-column target rate {target:.4} is unreachable"
        )));
    }
    let rate = |b: f64| logits.iter().map(|&z| sigmoid(z + b)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-100.0, 100.0);
    if rate(lo) > target || rate(hi) < target {
        return Err(Error::Calibration(format!(
            "bias search cannot bracket target rate {target:.4}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn mask_from_logits(
    logits: &[f64],
    target: f64,
    rng: &mut RngStream,
    mut write: impl FnMut(usize, f64),
) -> Result<()> {
    let bias = calibrate_bias(logits, target)?;
    for (i, &z) in logits.iter().enumerate() {
        let p = sigmoid(z + bias);
        write(i, if rng.uniform() < p { 1.0 } else { 0.0 });
    }
    Ok(())
}

fn mar_mask(table: &Table, ratio: f64, rng: &mut RngStream) -> Result<Matrix> {
    let (n, d) = (table.n_rows(), table.n_cols());
    if d < 2 {
        return Err(Error::Calibration(
            "MAR needs at least two columns (one observed, one masked)".into(),
        ));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, d));
    }
    let n_obs = ((MAR_OBSERVED_FRACTION * d as f64).round() as usize).clamp(1, d - 1);
    let mut order: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut order);
    let (observed, masked) = order.split_at(n_obs);
    // rescale so the whole-table rate matches despite fully observed columns
    let target = ratio * d as f64 / masked.len() as f64;

    let x = covariates(table);
    let mut mask = Matrix::zeros(n, d);
    for &j in masked {
        let weights: Vec<f64> = observed.iter().map(|_| rng.standard_normal()).collect();
        let mut logits: Vec<f64> = (0..n)
            .map(|i| {
                observed
                    .iter()
                    .zip(&weights)
                    .map(|(&o, w)| x[(i, o)] * w)
                    .sum()
            })
            .collect();
        let sd = std_dev(&logits);
        if sd > 0.0 {
            logits.iter_mut().for_each(|z| *z /= sd);
        }
        mask_from_logits(&logits, target, rng, |i, m| mask[(i, j)] = m)?;
    }
    Ok(mask)
}

fn mnar_mask(table: &Table, ratio: f64, rng: &mut RngStream) -> Result<Matrix> {
    let (n, d) = (table.n_rows(), table.n_cols());
    let x = covariates(table);
    let mut mask = Matrix::zeros(n, d);
    if n == 0 {
        return Ok(mask);
    }
    for j in 0..d {
        let w = rng.standard_normal();
        let mut logits: Vec<f64> = (0..n).map(|i| x[(i, j)] * w).collect();
        let sd = std_dev(&logits);
        if sd > 0.0 {
            logits.iter_mut().for_each(|z| *z /= sd);
        }
        mask_from_logits(&logits, ratio, rng, |i, m| mask[(i, j)] = m)?;
    }
    Ok(mask)
}
