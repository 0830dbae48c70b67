use crate::dataset::{Cell, NormalizationParams, Table};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn check(truth: &Table, imputed: &Table, mask: &Matrix) -> Result<()> {
    let shape = (truth.n_rows(), truth.n_cols());
    if (imputed.n_rows(), imputed.n_cols()) != shape || mask.shape() != shape {
        return Err(Error::DimensionMismatch {
            op: "metric",
            left: shape,
            right: (imputed.n_rows(), imputed.n_cols()),
        });
    }
    Ok(())
}

/// RMSE over masked numerical cells after mapping both tables through
/// `scaling`. `None` when no numerical cell is masked.
pub fn rmse(
    truth: &Table,
    imputed: &Table,
    mask: &Matrix,
    scaling: &NormalizationParams,
) -> Result<Option<f64>> {
    check(truth, imputed, mask)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..truth.n_rows() {
        for j in 0..truth.n_cols() {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            if let (Cell::Num(a), Cell::Num(b)) = (truth.get(i, j), imputed.get(i, j)) {
                let s = &scaling.columns[j];
                let e = s.forward(b) - s.forward(a);
                sum += e * e;
                count += 1;
            } else if truth.schema()[j].is_numerical() {
                return Err(Error::invalid(format!("cell ({i}, {j}) was not imputed")));
            }
        }
    }
    Ok((count > 0).then(|| (sum / count as f64).sqrt()))
}

/// Share of masked categorical cells imputed with the wrong category.
pub fn categorical_error(truth: &Table, imputed: &Table, mask: &Matrix) -> Result<Option<f64>> {
    check(truth, imputed, mask)?;
    let (mut wrong, mut count) = (0usize, 0usize);
    for i in 0..truth.n_rows() {
        for j in 0..truth.n_cols() {
            if mask[(i, j)] == 0.0 || truth.schema()[j].is_numerical() {
                continue;
            }
            count += 1;
            wrong += (truth.get(i, j) != imputed.get(i, j)) as usize;
        }
    }
    Ok((count > 0).then(|| wrong as f64 / count as f64))
}

/// Population mean and standard deviation; std only with two or more values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
    (Some(mean), std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnSchema;
    use proptest::prelude::*;

    fn col(vals: &[f64]) -> Table {
        Table::new(
            vec![ColumnSchema::numerical("x")],
            vals.iter().map(|&v| vec![Cell::Num(v)]).collect(),
        )
        .unwrap()
    }

    fn unit() -> NormalizationParams {
        NormalizationParams::fit(&col(&[0.0, 1.0]))
    }

    #[test]
    fn perfect_and_offset() {
        let t = col(&[0.1, 0.5, 0.9]);
        let m = Matrix::filled(3, 1, 1.0);
        assert_eq!(rmse(&t, &t, &m, &unit()).unwrap(), Some(0.0));
        let shifted = col(&[0.3, 0.7, 1.1]);
        let r = rmse(&t, &shifted, &m, &unit()).unwrap().unwrap();
        assert!((r - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_cell_hand_value() {
        let t = col(&[0.0, 0.0, 0.0]);
        let imp = col(&[0.3, 0.4, 5.0]);
        let m = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![0.0]]).unwrap();
        let r = rmse(&t, &imp, &m, &unit()).unwrap().unwrap();
        assert!((r - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_not_applicable() {
        let t = col(&[0.1]);
        assert_eq!(rmse(&t, &t, &Matrix::zeros(1, 1), &unit()).unwrap(), None);
    }

    #[test]
    fn categorical_error_rate() {
        let schema = vec![ColumnSchema::categorical("c", vec!["a".into(), "b".into()])];
        let t = Table::new(schema.clone(), vec![vec![Cell::Cat(0)], vec![Cell::Cat(1)]]).unwrap();
        let i = Table::new(schema, vec![vec![Cell::Cat(0)], vec![Cell::Cat(0)]]).unwrap();
        let e = categorical_error(&t, &i, &Matrix::filled(2, 1, 1.0)).unwrap();
        assert_eq!(e, Some(0.5));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[2.0]), (Some(2.0), None));
        assert_eq!(mean_std(&[1.0, 3.0]), (Some(2.0), Some(1.0)));
    }

    proptest! {
        #[test]
        fn rmse_is_permutation_invariant(seed in 0u64..200) {
            let mut rng = crate::numeric::RngStream::new(seed, 0);
            let truth: Vec<f64> = (0..10).map(|_| rng.uniform()).collect();
            let imp: Vec<f64> = (0..10).map(|_| rng.uniform()).collect();
            let mask = rng.sample_bernoulli(&Matrix::filled(10, 1, 0.5)).unwrap();
            let mut order: Vec<usize> = (0..10).collect();
            rng.shuffle(&mut order);
            let p = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let pm = mask.select_rows(&order);
            let a = rmse(&col(&truth), &col(&imp), &mask, &unit()).unwrap();
            let b = rmse(&col(&p(&truth)), &col(&p(&imp)), &pm, &unit()).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
