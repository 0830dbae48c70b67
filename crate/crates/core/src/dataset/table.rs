use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Observed range, filled in by the loader for numerical columns.
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl ColumnSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numerical,
            min: None,
            max: None,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { categories },
            min: None,
            max: None,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.kind, ColumnKind::Numerical)
    }

    /// Number of categories, or `None` for numerical columns.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            ColumnKind::Numerical => None,
            ColumnKind::Categorical { categories } => Some(categories.len()),
        }
    }

    pub fn categories(&self) -> &[String] {
        match &self.kind {
            ColumnKind::Numerical => &[],
            ColumnKind::Categorical { categories } => categories,
        }
    }
}

/// Hex SHA-256 over column names, kinds and category labels.
///
/// Observed ranges are deliberately left out: they depend on which cells
/// happen to be masked, not on the layout the model was trained for.
pub fn schema_hash(schema: &[ColumnSchema]) -> String {
    let mut h = Sha256::new();
    for c in schema {
        h.update(c.name.as_bytes());
        h.update([0u8]);
        match &c.kind {
            ColumnKind::Numerical => h.update(b"num"),
            ColumnKind::Categorical { categories } => {
                h.update(b"cat");
                for label in categories {
                    h.update([1u8]);
                    h.update(label.as_bytes());
                }
            }
        }
        h.update([2u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(usize),
    Null,
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<usize> {
        match self {
            Cell::Cat(k) => Some(*k),
            _ => None,
        }
    }
}

/// An `n × d` table of typed cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSchema>,
    n_rows: usize,
    cells: Vec<Cell>,
}

impl Table {
    pub fn new(schema: Vec<ColumnSchema>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let d = schema.len();
        let n_rows = rows.len();
        let mut cells = Vec::with_capacity(n_rows * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    op: "Table::new",
                    left: (i, d),
                    right: (i, row.len()),
                });
            }
            cells.extend(row);
        }
        let t = Self {
            schema,
            n_rows,
            cells,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for (j, col) in self.schema.iter().enumerate() {
            if let Some(k) = col.cardinality() {
                if k < 2 {
                    return Err(Error::invalid(format!(
                        "categorical column '{}' has {k} categories; need at least 2",
                        col.name
                    )));
                }
            }
            for i in 0..self.n_rows {
                match (&col.kind, self.get(i, j)) {
                    (_, Cell::Null) => {}
                    (ColumnKind::Numerical, Cell::Num(v)) if v.is_finite() => {}
                    (ColumnKind::Categorical { categories }, Cell::Cat(k))
                        if k < categories.len() => {}
                    (_, cell) => {
                        return Err(Error::invalid(format!(
                            "cell ({i}, {j}) = {cell:?} does not fit column '{}'",
                            col.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.schema.len() + j]
    }

    /// Overwrites one cell, checking it against the column type.
    pub fn set(&mut self, i: usize, j: usize, cell: Cell) -> Result<()> {
        let ok = match (&self.schema[j].kind, cell) {
            (_, Cell::Null) => true,
            (ColumnKind::Numerical, Cell::Num(v)) => v.is_finite(),
            (ColumnKind::Categorical { categories }, Cell::Cat(k)) => k < categories.len(),
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(format!(
                "cell {cell:?} does not fit column '{}'",
                self.schema[j].name
            )));
        }
        let d = self.schema.len();
        self.cells[i * d + j] = cell;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        let d = self.schema.len();
        &self.cells[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_rows).map(move |i| self.get(i, j))
    }

    /// `1` where a cell is null.
    pub fn null_mask(&self) -> Matrix {
        Matrix::from_fn(self.n_rows, self.n_cols(), |i, j| {
            if self.get(i, j).is_null() {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn count_nulls(&self) -> usize {
        self.cells.iter().filter(|c| c.is_null()).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let mut cells = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            cells.extend_from_slice(self.row(i));
        }
        Table {
            schema: self.schema.clone(),
            n_rows: idx.len(),
            cells,
        }
    }

    /// Recomputes the observed min/max of every numerical column.
    pub fn rescan_ranges(&mut self) {
        for j in 0..self.n_cols() {
            if !self.schema[j].is_numerical() {
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in self.column(j).filter_map(|c| c.as_num()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let seen = lo <= hi;
            self.schema[j].min = seen.then_some(lo);
            self.schema[j].max = seen.then_some(hi);
        }
    }

    /// Replaces cells where `mask` is 1 with nulls.
    pub fn with_nulls(&self, mask: &Matrix) -> Result<Table> {
        if mask.shape() != (self.n_rows, self.n_cols()) {
            return Err(Error::DimensionMismatch {
                op: "with_nulls",
                left: (self.n_rows, self.n_cols()),
                right: mask.shape(),
            });
        }
        let mut out = self.clone();
        for (c, &m) in out.cells.iter_mut().zip(mask.as_slice()) {
            if m != 0.0 {
                *c = Cell::Null;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_category() {
        let schema = vec![ColumnSchema::categorical("c", vec!["a".into(), "b".into()])];
        assert!(Table::new(schema, vec![vec![Cell::Cat(2)]]).is_err());
    }

    #[test]
    fn rejects_single_category_column() {
        let schema = vec![ColumnSchema::categorical("c", vec!["a".into()])];
        assert!(Table::new(schema, vec![vec![Cell::Cat(0)]]).is_err());
    }

    #[test]
    fn rejects_non_finite_numbers() {
        let schema = vec![ColumnSchema::numerical("x")];
        assert!(Table::new(schema, vec![vec![Cell::Num(f64::NAN)]]).is_err());
    }

    #[test]
    fn schema_hash_ignores_ranges() {
        let mut a = ColumnSchema::numerical("x");
        let b = a.clone();
        a.min = Some(0.0);
        assert_eq!(schema_hash(&[a]), schema_hash(&[b]));
        let c = ColumnSchema::categorical("x", vec!["p".into(), "q".into()]);
        assert_ne!(
            schema_hash(&[c]),
            schema_hash(&[ColumnSchema::numerical("x")])
        );
    }
}
