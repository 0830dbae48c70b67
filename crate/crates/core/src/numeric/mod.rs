//! Dense linear algebra and seeded sampling.

mod matrix;
mod rng;

pub use matrix::{gemm, gemm_with, matmul, Matrix, Op, Precision};
pub use rng::{stream_id, RngStream, PROB_SUM_TOL};

pub(crate) use rng::validate_probs;

/// Logistic sigmoid. Saturates cleanly: `exp` overflow gives 0, not NaN.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax of one logit vector, shifted by the max for stability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let s = softmax(logits.row(i));
        out.row_mut(i).copy_from_slice(&s);
    }
    out
}
