//! Synthetic tables: a four-feature stand-in for the combined-cycle power
//! plant data, and correlated Gaussian tables for timing runs.

use crate::dataset::{Cell, ColumnSchema, Table};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub const POWER_COLUMNS: [&str; 4] = ["AT", "V", "AP", "RH"];
pub const POWER_ROWS: usize = 9568;
const POWER_MEAN: [f64; 4] = [19.65, 54.3, 1013.26, 73.3];
const POWER_SD: [f64; 4] = [7.45, 12.7, 5.94, 14.6];
const POWER_CORR: [[f64; 4]; 4] = [
    [1.0, 0.84, -0.51, -0.54],
    [0.84, 1.0, -0.41, -0.31],
    [-0.51, -0.41, 1.0, 0.10],
    [-0.54, -0.31, 0.10, 1.0],
];

/// Lower-triangular `L` with `L Lᵀ = a`.
fn cholesky<const N: usize>(a: &[[f64; N]; N]) -> Result<[[f64; N]; N]> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Multivariate Gaussian rows with the marginal means, spreads and
/// correlations of the ambient temperature / exhaust vacuum / pressure /
/// humidity features.
pub fn power_like(n: usize, seed: u64) -> Result<Table> {
    let l = cholesky(&POWER_CORR)?;
    let mut rng = RngStream::derive(seed, "synthetic-power", 0, 0);
    let schema = POWER_COLUMNS
        .iter()
        .map(|&c| ColumnSchema::numerical(c))
        .collect();
    let rows = (0..n)
        .map(|_| {
            let z: [f64; 4] = std::array::from_fn(|_| rng.standard_normal());
            (0..4)
                .map(|i| {
                    let c: f64 = (0..=i).map(|k| l[i][k] * z[k]).sum();
                    // two decimals, like the source measurements
                    Cell::Num(((POWER_MEAN[i] + POWER_SD[i] * c) * 100.0).round() / 100.0)
                })
                .collect()
        })
        .collect();
    let mut t = Table::new(schema, rows)?;
    t.rescan_ranges();
    Ok(t)
}

/// `n × d` numerical table driven by two shared latent factors plus noise.
pub fn gaussian_table(n: usize, d: usize, seed: u64) -> Result<Table> {
    let mut rng = RngStream::derive(seed, "synthetic-gaussian", d as u64, 0);
    let loadings: Vec<[f64; 2]> = (0..d)
        .map(|_| [rng.standard_normal(), rng.standard_normal()])
        .collect();
    let schema = (0..d)
        .map(|j| ColumnSchema::numerical(format!("x{j}")))
        .collect();
    let rows = (0..n)
        .map(|_| {
            let f = [rng.standard_normal(), rng.standard_normal()];
            loadings
                .iter()
                .map(|w| Cell::Num(w[0] * f[0] + w[1] * f[1] + 0.3 * rng.standard_normal()))
                .collect()
        })
        .collect();
    let mut t = Table::new(schema, rows)?;
    t.rescan_ranges();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let l = cholesky(&POWER_CORR).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let v: f64 = (0..4).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - POWER_CORR[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn power_moments() {
        let t = power_like(20_000, 1).unwrap();
        let col = |j: usize| t.column(j).filter_map(|c| c.as_num()).collect::<Vec<_>>();
        let (a, v) = (col(0), col(1));
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let (ma, mv) = (mean(&a), mean(&v));
        assert!((ma - POWER_MEAN[0]).abs() < 0.2);
        let cov = a
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - ma) * (y - mv))
            .sum::<f64>()
            / a.len() as f64;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        let sv = (v.iter().map(|x| (x - mv).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((cov / (sa * sv) - 0.84).abs() < 0.02);
    }

    #[test]
    fn seeded() {
        assert_eq!(power_like(50, 3).unwrap(), power_like(50, 3).unwrap());
        assert_eq!(
            gaussian_table(10, 4, 1).unwrap(),
            gaussian_table(10, 4, 1).unwrap()
        );
        assert_eq!(gaussian_table(7, 5, 2).unwrap().n_cols(), 5);
    }
}
