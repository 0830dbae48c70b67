//! Seeded random streams and the samplers built on them.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed and a 64-bit
//! stream id. Stream ids for pipeline stages are derived with FNV-1a over
//! `(component, epoch, channel)`, so independent consumers (the two alignment
//! channels, the pseudo-mask sampler, the shuffler) never share draws.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream for a named pipeline component at a given epoch and channel.
    pub fn derive(seed: u64, component: &str, epoch: u64, channel: u64) -> Self {
        Self::new(seed, stream_id(component, epoch, channel))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `{0, .., n-1}`; `n` must be positive.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Matrix of i.i.d. standard normal entries.
    pub fn sample_gaussian(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches shape")
    }

    /// Entry-wise Bernoulli draws with the given success probabilities.
    pub fn sample_bernoulli(&mut self, probs: &Matrix) -> Result<Matrix> {
        if let Some(p) = probs.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability(format!(
                "bernoulli probability {p} outside [0, 1]"
            )));
        }
        // one draw per cell regardless of p, so the stream stays aligned
        let data = probs
            .as_slice()
            .iter()
            .map(|&p| {
                if self.inner.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Matrix::from_vec(probs.rows(), probs.cols(), data)
    }

    /// Draws an index from a normalized probability vector.
    pub fn sample_categorical(&mut self, probs: &[f64]) -> Result<usize> {
        validate_probs(probs)?;
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = k;
            }
            acc += p;
            if u < acc {
                return Ok(k);
            }
        }
        // u landed in the rounding gap above the cumulative sum
        Ok(last_positive)
    }
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidProbability("empty probability vector".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidProbability(format!(
            "negative or non-finite entry in {probs:?}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidProbability(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// FNV-1a over the component name followed by epoch and channel bytes.
pub fn stream_id(component: &str, epoch: u64, channel: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    component
        .as_bytes()
        .iter()
        .chain(&[0xff])
        .chain(&epoch.to_le_bytes())
        .chain(&channel.to_le_bytes())
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}
