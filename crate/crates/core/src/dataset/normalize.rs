use serde::{Deserialize, Serialize};

use super::table::{Cell, Table};
use crate::error::{Error, Result};

/// Per-column affine map to `[0, 1]`, fit on observed cells only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scaling", rename_all = "snake_case")]
pub enum ColumnScaling {
    /// Categorical column; never touched.
    Identity,
    MinMax {
        min: f64,
        max: f64,
    },
    /// Every observed value equals `value`; normalized to 0.
    Constant {
        value: f64,
    },
    /// Numerical column with no observed cells.
    Unobserved,
}

impl ColumnScaling {
    pub fn forward(&self, v: f64) -> f64 {
        match *self {
            ColumnScaling::MinMax { min, max } => (v - min) / (max - min),
            ColumnScaling::Constant { .. } => 0.0,
            ColumnScaling::Identity | ColumnScaling::Unobserved => v,
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match *self {
            ColumnScaling::MinMax { min, max } => min + v * (max - min),
            ColumnScaling::Constant { value } => value + v,
            ColumnScaling::Identity | ColumnScaling::Unobserved => v,
        }
    }

    pub fn is_flagged(&self) -> bool {
        matches!(
            self,
            ColumnScaling::Constant { .. } | ColumnScaling::Unobserved
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub columns: Vec<ColumnScaling>,
}

impl NormalizationParams {
    pub fn fit(table: &Table) -> Self {
        let columns = (0..table.n_cols())
            .map(|j| {
                if !table.schema()[j].is_numerical() {
                    return ColumnScaling::Identity;
                }
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in table.column(j).filter_map(|c| c.as_num()) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if lo > hi {
                    ColumnScaling::Unobserved
                } else if lo == hi {
                    ColumnScaling::Constant { value: lo }
                } else {
                    ColumnScaling::MinMax { min: lo, max: hi }
                }
            })
            .collect();
        Self { columns }
    }

    /// Columns that are constant or have nothing observed.
    pub fn flagged_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| self.columns[j].is_flagged())
            .collect()
    }

    pub fn apply(&self, table: &Table) -> Result<Table> {
        self.map(table, ColumnScaling::forward)
    }

    pub fn invert(&self, table: &Table) -> Result<Table> {
        self.map(table, ColumnScaling::inverse)
    }

    fn map(&self, table: &Table, f: fn(&ColumnScaling, f64) -> f64) -> Result<Table> {
        if table.n_cols() != self.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "normalization fit on {} columns, table has {}",
                self.columns.len(),
                table.n_cols()
            )));
        }
        let mut out = table.clone();
        for i in 0..table.n_rows() {
            for (j, scaling) in self.columns.iter().enumerate() {
                if let Cell::Num(v) = table.get(i, j) {
                    out.set(i, j, Cell::Num(f(scaling, v)))?;
                }
            }
        }
        out.rescan_ranges();
        Ok(out)
    }
}

/// Min-max scales every numerical column to `[0, 1]` using observed cells.
pub fn normalize(table: &Table) -> Result<(Table, NormalizationParams)> {
    let params = NormalizationParams::fit(table);
    let scaled = params.apply(table)?;
    Ok((scaled, params))
}
