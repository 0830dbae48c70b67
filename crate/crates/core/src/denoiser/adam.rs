use serde::{Deserialize, Serialize};

use super::DenoiserParams;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: DenoiserParams,
    v: DenoiserParams,
}

impl Adam {
    pub fn new(params: &DenoiserParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut DenoiserParams, grads: &DenoiserParams) -> Result<()> {
        if params.n_params() != grads.n_params() || params.n_params() != self.m.n_params() {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((p, &g), m), v) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureLayout;
    use crate::denoiser::{Architecture, Denoiser};
    use crate::numeric::Precision;
    use crate::schedule::ScheduleKind;

    fn model() -> Denoiser {
        let arch = Architecture {
            layers: 3,
            hidden: 4,
            steps: 3,
            precision: Precision::F64,
            schedule: ScheduleKind::Linear,
        };
        Denoiser::new(arch, FeatureLayout::numerical(2), 3).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut m = model();
        let before = m.params.clone();
        let mut opt = Adam::new(&m.params, 1e-3);
        let zero = m.params.zeros_like();
        for _ in 0..10 {
            opt.step(&mut m.params, &zero).unwrap();
        }
        assert_eq!(m.params, before);
        assert_eq!(opt.steps_taken(), 10);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut m = model();
        let mut grad = m.params.zeros_like();
        for w in grad.tensors_mut() {
            *w = w.map(|_| 0.37);
        }
        let mut opt = Adam::new(&m.params, 1e-3);
        for _ in 0..200 {
            opt.step(&mut m.params, &grad).unwrap();
        }
        let before = m.params.clone();
        opt.step(&mut m.params, &grad).unwrap();
        for (a, b) in before.tensors().iter().zip(m.params.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                let moved = x - y;
                assert!((moved / 1e-3 - 1.0).abs() <= 0.01, "{moved}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut m = model();
            let mut opt = Adam::new(&m.params, 1e-2);
            let mut g = m.params.zeros_like();
            for (k, w) in g.tensors_mut().into_iter().enumerate() {
                *w = w.map(|_| (k as f64 * 0.7).sin());
            }
            for _ in 0..5 {
                opt.step(&mut m.params, &g).unwrap();
            }
            m.params
        };
        assert_eq!(run(), run());
    }
}
