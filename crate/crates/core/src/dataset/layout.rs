//! Model-space encoding: numerical columns first, then one one-hot block per
//! categorical column, both in schema order.

use serde::{Deserialize, Serialize};

use super::table::{Cell, ColumnSchema, Table};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Numerical {
        pos: usize,
    },
    Categorical {
        offset: usize,
        k: usize,
        head: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    slots: Vec<Slot>,
    num_dim: usize,
    cat_sizes: Vec<usize>,
}

impl FeatureLayout {
    pub fn from_schema(schema: &[ColumnSchema]) -> Self {
        let num_dim = schema.iter().filter(|c| c.is_numerical()).count();
        let mut pos = 0;
        let mut offset = num_dim;
        let mut cat_sizes = Vec::new();
        let slots = schema
            .iter()
            .map(|c| match c.cardinality() {
                None => {
                    pos += 1;
                    Slot::Numerical { pos: pos - 1 }
                }
                Some(k) => {
                    let s = Slot::Categorical {
                        offset,
                        k,
                        head: cat_sizes.len(),
                    };
                    offset += k;
                    cat_sizes.push(k);
                    s
                }
            })
            .collect();
        Self {
            slots,
            num_dim,
            cat_sizes,
        }
    }

    /// All-numerical layout over `d` columns.
    pub fn numerical(d: usize) -> Self {
        Self {
            slots: (0..d).map(|pos| Slot::Numerical { pos }).collect(),
            num_dim: d,
            cat_sizes: Vec::new(),
        }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Number of table columns.
    pub fn n_columns(&self) -> usize {
        self.slots.len()
    }

    pub fn num_dim(&self) -> usize {
        self.num_dim
    }

    pub fn cat_sizes(&self) -> &[usize] {
        &self.cat_sizes
    }

    /// Width of the encoded row.
    pub fn width(&self) -> usize {
        self.num_dim + self.cat_sizes.iter().sum::<usize>()
    }

    /// `(table column, offset, k, head)` for each categorical column.
    pub fn categorical(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.slots.iter().enumerate().filter_map(|(j, s)| match *s {
            Slot::Categorical { offset, k, head } => Some((j, offset, k, head)),
            Slot::Numerical { .. } => None,
        })
    }

    /// `(table column, encoded position)` for each numerical column.
    pub fn numerical_columns(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots.iter().enumerate().filter_map(|(j, s)| match *s {
            Slot::Numerical { pos } => Some((j, pos)),
            Slot::Categorical { .. } => None,
        })
    }

    fn check_table(&self, table: &Table) -> Result<()> {
        if FeatureLayout::from_schema(table.schema()) != *self {
            return Err(Error::SchemaMismatch(
                "table schema does not match feature layout".into(),
            ));
        }
        Ok(())
    }

    /// Encodes a table; null cells become zeros.
    pub fn encode(&self, table: &Table) -> Result<Matrix> {
        self.check_table(table)?;
        let mut x = Matrix::zeros(table.n_rows(), self.width());
        for i in 0..table.n_rows() {
            for (j, slot) in self.slots.iter().enumerate() {
                match (*slot, table.get(i, j)) {
                    (Slot::Numerical { pos }, Cell::Num(v)) => x[(i, pos)] = v,
                    (Slot::Categorical { offset, .. }, Cell::Cat(c)) => x[(i, offset + c)] = 1.0,
                    _ => {}
                }
            }
        }
        Ok(x)
    }

    /// Broadcasts a per-column `n × d` matrix to the encoded `n × width`.
    pub fn expand(&self, per_column: &Matrix) -> Result<Matrix> {
        if per_column.cols() != self.n_columns() {
            return Err(Error::DimensionMismatch {
                op: "FeatureLayout::expand",
                left: (per_column.rows(), self.n_columns()),
                right: per_column.shape(),
            });
        }
        let mut out = Matrix::zeros(per_column.rows(), self.width());
        for i in 0..per_column.rows() {
            for (j, slot) in self.slots.iter().enumerate() {
                let v = per_column[(i, j)];
                match *slot {
                    Slot::Numerical { pos } => out[(i, pos)] = v,
                    Slot::Categorical { offset, k, .. } => {
                        out.row_mut(i)[offset..offset + k].fill(v)
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decodes an encoded matrix; categorical blocks are read by argmax
    /// (ties to the lowest index).
    pub fn decode(&self, x: &Matrix, schema: &[ColumnSchema]) -> Result<Table> {
        if x.cols() != self.width() {
            return Err(Error::DimensionMismatch {
                op: "FeatureLayout::decode",
                left: (x.rows(), self.width()),
                right: x.shape(),
            });
        }
        let rows = (0..x.rows())
            .map(|i| {
                self.slots
                    .iter()
                    .map(|slot| match *slot {
                        Slot::Numerical { pos } => Cell::Num(x[(i, pos)]),
                        Slot::Categorical { offset, k, .. } => {
                            Cell::Cat(argmax(&x.row(i)[offset..offset + k]))
                        }
                    })
                    .collect()
            })
            .collect();
        Table::new(schema.to_vec(), rows)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = k;
        }
    }
    best
}

/// Dense model input with missing cells filled by column statistics.
#[derive(Clone, Debug)]
pub struct PaddedMatrix {
    pub matrix: Matrix,
    pub layout: FeatureLayout,
    /// Columns with no observed cell, padded with 0.5 or a uniform block.
    pub flagged_columns: Vec<usize>,
}

/// Fills missing cells with the observed column mean (numerical) or the
/// one-hot mode (categorical, ties to the lowest index).
///
/// A cell counts as missing when it is null or `mask` is 1 there.
pub fn average_pad(table: &Table, mask: &Matrix) -> Result<PaddedMatrix> {
    let (n, d) = (table.n_rows(), table.n_cols());
    if mask.shape() != (n, d) {
        return Err(Error::DimensionMismatch {
            op: "average_pad",
            left: (n, d),
            right: mask.shape(),
        });
    }
    let layout = FeatureLayout::from_schema(table.schema());
    let missing = |i: usize, j: usize| mask[(i, j)] != 0.0 || table.get(i, j).is_null();
    let mut x = Matrix::zeros(n, layout.width());
    let mut flagged = Vec::new();

    for (j, slot) in layout.slots().iter().enumerate() {
        match *slot {
            Slot::Numerical { pos } => {
                let observed: Vec<f64> = (0..n)
                    .filter(|&i| !missing(i, j))
                    .filter_map(|i| table.get(i, j).as_num())
                    .collect();
                let fill = if observed.is_empty() {
                    flagged.push(j);
                    0.5
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                };
                for i in 0..n {
                    x[(i, pos)] = match table.get(i, j) {
                        Cell::Num(v) if !missing(i, j) => v,
                        _ => fill,
                    };
                }
            }
            Slot::Categorical { offset, k, .. } => {
                let mut counts = vec![0usize; k];
                for i in (0..n).filter(|&i| !missing(i, j)) {
                    if let Cell::Cat(c) = table.get(i, j) {
                        counts[c] += 1;
                    }
                }
                let fill: Vec<f64> = if counts.iter().all(|&c| c == 0) {
                    flagged.push(j);
                    vec![1.0 / k as f64; k]
                } else {
                    let mode = counts.iter().enumerate().fold(0, |best, (c, &cnt)| {
                        if cnt > counts[best] {
                            c
                        } else {
                            best
                        }
                    });
                    (0..k).map(|c| if c == mode { 1.0 } else { 0.0 }).collect()
                };
                for i in 0..n {
                    let block = &mut x.row_mut(i)[offset..offset + k];
                    match table.get(i, j) {
                        Cell::Cat(c) if !missing(i, j) => block[c] = 1.0,
                        _ => block.copy_from_slice(&fill),
                    }
                }
            }
        }
    }
    if !flagged.is_empty() {
        log::warn!("columns {flagged:?} have no observed cells; padded with defaults");
    }
    Ok(PaddedMatrix {
        matrix: x,
        layout,
        flagged_columns: flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> Table {
        Table::new(
            vec![
                ColumnSchema::numerical("x"),
                ColumnSchema::categorical("c", vec!["a".into(), "b".into()]),
            ],
            vec![
                vec![Cell::Num(0.2), Cell::Cat(0)],
                vec![Cell::Num(0.4), Cell::Cat(0)],
                vec![Cell::Null, Cell::Cat(1)],
                vec![Cell::Num(0.9), Cell::Null],
            ],
        )
        .unwrap()
    }

    #[test]
    fn mean_and_mode_padding() {
        let t = mixed();
        let mut mask = t.null_mask();
        // also treat row 3's numerical cell as masked
        mask[(3, 0)] = 1.0;
        let p = average_pad(&t, &mask).unwrap();
        assert!((p.matrix[(2, 0)] - 0.3).abs() < 1e-15);
        assert!((p.matrix[(3, 0)] - 0.3).abs() < 1e-15);
        assert_eq!(p.matrix.row(3)[1..], [1.0, 0.0]);
        assert_eq!(p.matrix.row(2)[1..], [0.0, 1.0]);
        assert!(p.flagged_columns.is_empty());
    }

    #[test]
    fn complete_table_is_copied() {
        let t = Table::new(
            vec![ColumnSchema::numerical("x"), ColumnSchema::numerical("y")],
            vec![
                vec![Cell::Num(0.1), Cell::Num(0.7)],
                vec![Cell::Num(0.5), Cell::Num(0.0)],
            ],
        )
        .unwrap();
        let p = average_pad(&t, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p.matrix, FeatureLayout::numerical(2).encode(&t).unwrap());
    }

    #[test]
    fn fully_missing_columns_are_flagged() {
        let t = Table::new(
            vec![
                ColumnSchema::numerical("x"),
                ColumnSchema::categorical("c", vec!["a".into(), "b".into(), "z".into()]),
            ],
            vec![vec![Cell::Null, Cell::Null], vec![Cell::Null, Cell::Null]],
        )
        .unwrap();
        let p = average_pad(&t, &t.null_mask()).unwrap();
        assert_eq!(p.flagged_columns, vec![0, 1]);
        assert_eq!(p.matrix[(0, 0)], 0.5);
        assert!((p.matrix[(1, 2)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn categorical_mode_oracle() {
        let t = Table::new(
            vec![ColumnSchema::categorical("c", vec!["a".into(), "b".into()])],
            vec![
                vec![Cell::Cat(0)],
                vec![Cell::Cat(0)],
                vec![Cell::Cat(1)],
                vec![Cell::Null],
            ],
        )
        .unwrap();
        let p = average_pad(&t, &t.null_mask()).unwrap();
        assert_eq!(p.matrix.row(3), &[1.0, 0.0]);
    }

    #[test]
    fn encode_expand_decode() {
        let t = mixed();
        let layout = FeatureLayout::from_schema(t.schema());
        assert_eq!(layout.width(), 3);
        let mask = layout.expand(&t.null_mask()).unwrap();
        assert_eq!(mask.row(3), &[0.0, 1.0, 1.0]);
        let p = average_pad(&t, &t.null_mask()).unwrap();
        let back = layout.decode(&p.matrix, t.schema()).unwrap();
        assert_eq!(back.get(1, 0), Cell::Num(0.4));
        assert_eq!(back.get(2, 1), Cell::Cat(1));
    }
}
