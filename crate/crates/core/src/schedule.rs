//! Diffusion constants and forward sampling for the Gaussian (numerical) and
//! multinomial (categorical) processes. Steps are 1-based: `t ∈ 1..=T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{validate_probs, Matrix, RngStream};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
/// Length of the linear reference chain that `Respaced` subsamples.
pub const REFERENCE_STEPS: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// β linear from `BETA_START` to `BETA_END` across the `T` steps.
    Linear,
    /// `ᾱ_t` read off the 1000-step linear chain at step `round(t·1000/T)`,
    /// so `x_T` is close to pure noise for any `T`.
    #[default]
    Respaced,
}

fn linear_betas(steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![BETA_START];
    }
    (0..steps)
        .map(|i| BETA_START + i as f64 / (steps - 1) as f64 * (BETA_END - BETA_START))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl Schedule {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => linear_betas(steps),
            ScheduleKind::Respaced => {
                if steps > REFERENCE_STEPS {
                    return Err(Error::invalid(format!(
                        "respaced schedule supports at most {REFERENCE_STEPS} steps, got {steps}"
                    )));
                }
                let reference = Self::from_betas(linear_betas(REFERENCE_STEPS));
                let mut prev = 1.0;
                (1..=steps)
                    .map(|t| {
                        let s = ((t * REFERENCE_STEPS) as f64 / steps as f64).round() as usize;
                        let ab = reference.alpha_bar(s);
                        let b = 1.0 - ab / prev;
                        prev = ab;
                        b
                    })
                    .collect()
            }
        };
        Ok(Self::from_betas(beta))
    }

    pub(crate) fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                let denom = 1.0 - alpha_bar[i];
                if denom <= 0.0 {
                    0.0
                } else {
                    (beta[i] * (1.0 - prev) / denom).sqrt()
                }
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.steps(), "step {t} out of range");
        t - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar(t - 1)
        }
    }

    /// Posterior standard deviation `σ_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Coefficients `(c0, ct)` of the Gaussian posterior mean
    /// `μ = c0 · x̂0 + ct · x_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let c0 = self.beta(t) * ab_prev.sqrt() / (1.0 - ab);
        let ct = (1.0 - ab_prev) * self.alpha(t).sqrt() / (1.0 - ab);
        (c0, ct)
    }
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<Schedule> {
    Schedule::new(steps, kind)
}

/// Closed-form Gaussian marginal `x_t = √ᾱ_t · x0 + √(1-ᾱ_t) · ε`.
pub fn forward_gaussian(x0: &Matrix, t: usize, sched: &Schedule, eps: &Matrix) -> Result<Matrix> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Index of the hot entry of a valid one-hot vector.
pub fn one_hot_index(x: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (k, &v) in x.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::invalid(format!("{x:?} is not one-hot")));
            }
            hot = Some(k);
        } else if v != 0.0 {
            return Err(Error::invalid(format!("{x:?} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::invalid(format!("{x:?} is not one-hot")))
}

pub fn one_hot(k: usize, size: usize) -> Vec<f64> {
    let mut v = vec![0.0; size];
    v[k] = 1.0;
    v
}

/// Marginal class probabilities `ᾱ_t x0 + (1-ᾱ_t)/K`.
pub fn multinomial_marginal(x0: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let k = x0.len() as f64;
    Ok(x0.iter().map(|&p| ab * p + (1.0 - ab) / k).collect())
}

/// Samples `x_t ~ Cat(ᾱ_t x0 + (1-ᾱ_t)/K)` for a one-hot `x0`.
pub fn forward_multinomial(
    x0: &[f64],
    t: usize,
    sched: &Schedule,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    one_hot_index(x0)?;
    let probs = multinomial_marginal(x0, t, sched)?;
    let k = rng.sample_categorical(&probs)?;
    Ok(one_hot(k, x0.len()))
}

/// Single-step transition matrix; row `i` is `q(x_t | x_{t-1} = i)`.
pub fn multinomial_step_kernel(t: usize, k: usize, sched: &Schedule) -> Result<Matrix> {
    sched.check_step(t)?;
    let b = sched.beta(t);
    Ok(Matrix::from_fn(k, k, |i, j| {
        (if i == j { 1.0 - b } else { 0.0 }) + b / k as f64
    }))
}

/// `p(x_{t-1} | x_t) = Σ_k x0_hat[k] · q(x_{t-1} | x_t, x0 = k)`.
pub fn multinomial_posterior(
    x_t: &[f64],
    x0_hat: &[f64],
    t: usize,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid(
            "multinomial posterior is undefined at t = 0",
        ));
    }
    sched.check_step(t)?;
    if x_t.len() != x0_hat.len() {
        return Err(Error::DimensionMismatch {
            op: "multinomial_posterior",
            left: (1, x_t.len()),
            right: (1, x0_hat.len()),
        });
    }
    validate_probs(x0_hat)?;
    let cur = one_hot_index(x_t)?;
    let size = x_t.len();
    let kf = size as f64;
    let (a, b) = (sched.alpha(t), sched.beta(t));
    let ab_prev = sched.alpha_bar_prev(t);

    // likelihood of the observed x_t given each candidate x_{t-1}
    let like: Vec<f64> = (0..size)
        .map(|j| (if j == cur { a } else { 0.0 }) + b / kf)
        .collect();
    let mut out = vec![0.0; size];
    for (k, &w) in x0_hat.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let unnorm: Vec<f64> = (0..size)
            .map(|j| like[j] * ((if j == k { ab_prev } else { 0.0 }) + (1.0 - ab_prev) / kf))
            .collect();
        let z: f64 = unnorm.iter().sum();
        if z == 0.0 {
            // x_t unreachable from this x0 candidate
            continue;
        }
        for (o, u) in out.iter_mut().zip(&unnorm) {
            *o += w * u / z;
        }
    }
    let total: f64 = out.iter().sum();
    if total == 0.0 {
        return Ok(x_t.to_vec());
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}
