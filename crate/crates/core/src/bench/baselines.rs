//! Mean/mode and k-nearest-neighbour imputation.

use crate::dataset::{Cell, ColumnKind, FeatureLayout, NormalizationParams, Table};
use crate::error::{Error, Result};
use crate::imputer::ImputationResult;

pub const DEFAULT_KNN_K: usize = 5;

fn column_mean(table: &Table, j: usize) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in table.column(j).filter_map(|c| c.as_num()) {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Most frequent category, ties to the lowest index.
fn mode(counts: &[usize]) -> Option<usize> {
    let best = counts
        .iter()
        .enumerate()
        .fold(0, |best, (c, &n)| if n > counts[best] { c } else { best });
    (counts.get(best).copied().unwrap_or(0) > 0).then_some(best)
}

fn column_mode(table: &Table, j: usize, k: usize) -> Option<usize> {
    let mut counts = vec![0usize; k];
    for c in table.column(j).filter_map(|c| c.as_cat()) {
        counts[c] += 1;
    }
    mode(&counts)
}

/// Fallback when a numerical column has no observed cell: the centre of
/// the unit range on the normalized scale.
fn column_fallback(table: &Table, j: usize) -> Cell {
    match &table.schema()[j].kind {
        ColumnKind::Numerical => Cell::Num(column_mean(table, j).unwrap_or(0.5)),
        ColumnKind::Categorical { categories } => {
            Cell::Cat(column_mode(table, j, categories.len()).unwrap_or(0))
        }
    }
}

fn finish(table: Table, normalization: &NormalizationParams) -> Result<ImputationResult> {
    let layout = FeatureLayout::from_schema(table.schema());
    let matrix = layout.encode(&normalization.apply(&table)?)?;
    Ok(ImputationResult {
        table,
        matrix,
        seeds: Vec::new(),
        steps: 0,
    })
}

/// Fills numerical nulls with the observed column mean and categorical nulls
/// with the observed mode.
pub fn mean_impute(table: &Table) -> Result<ImputationResult> {
    let fills: Vec<Cell> = (0..table.n_cols())
        .map(|j| column_fallback(table, j))
        .collect();
    let mut out = table.clone();
    for i in 0..table.n_rows() {
        for (j, fill) in fills.iter().enumerate() {
            if table.get(i, j).is_null() {
                out.set(i, j, *fill)?;
            }
        }
    }
    out.rescan_ranges();
    finish(out, &NormalizationParams::fit(table))
}

/// Root of the mean squared difference over numerical columns observed in
/// both rows, on the min-max scale. `None` without overlap.
fn distance(scaled: &[Vec<Option<f64>>], a: usize, b: usize) -> Option<f64> {
    let (mut sum, mut overlap) = (0.0, 0usize);
    for (x, y) in scaled[a].iter().zip(&scaled[b]) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y) * (x - y);
            overlap += 1;
        }
    }
    (overlap > 0).then(|| (sum / overlap as f64).sqrt())
}

/// For every null cell, averages (numerical) or votes (categorical) over the
/// `k` nearest rows that observe that cell. Rows sharing no observed
/// numerical column with the target are not neighbours; with no eligible
/// neighbour the column mean/mode is used.
pub fn knn_impute(table: &Table, k: usize) -> Result<ImputationResult> {
    if k == 0 {
        return Err(Error::invalid("knn needs k >= 1"));
    }
    let norm = NormalizationParams::fit(table);
    let num_cols: Vec<usize> = (0..table.n_cols())
        .filter(|&j| table.schema()[j].is_numerical())
        .collect();
    let scaled: Vec<Vec<Option<f64>>> = (0..table.n_rows())
        .map(|i| {
            num_cols
                .iter()
                .map(|&j| table.get(i, j).as_num().map(|v| norm.columns[j].forward(v)))
                .collect()
        })
        .collect();
    let fallback: Vec<Cell> = (0..table.n_cols())
        .map(|j| column_fallback(table, j))
        .collect();

    let mut out = table.clone();
    for i in 0..table.n_rows() {
        let missing: Vec<usize> = (0..table.n_cols())
            .filter(|&j| table.get(i, j).is_null())
            .collect();
        if missing.is_empty() {
            continue;
        }
        let mut neighbours: Vec<(f64, usize)> = (0..table.n_rows())
            .filter(|&r| r != i)
            .filter_map(|r| distance(&scaled, i, r).map(|d| (d, r)))
            .collect();
        neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for j in missing {
            let donors = neighbours
                .iter()
                .filter(|(_, r)| !table.get(*r, j).is_null())
                .take(k)
                .map(|&(_, r)| table.get(r, j));
            let cell = match &table.schema()[j].kind {
                ColumnKind::Numerical => {
                    let vals: Vec<f64> = donors.filter_map(|c| c.as_num()).collect();
                    if vals.is_empty() {
                        fallback[j]
                    } else {
                        Cell::Num(vals.iter().sum::<f64>() / vals.len() as f64)
                    }
                }
                ColumnKind::Categorical { categories } => {
                    let mut counts = vec![0usize; categories.len()];
                    for c in donors.filter_map(|c| c.as_cat()) {
                        counts[c] += 1;
                    }
                    mode(&counts).map(Cell::Cat).unwrap_or(fallback[j])
                }
            };
            out.set(i, j, cell)?;
        }
    }
    out.rescan_ranges();
    finish(out, &norm)
}
