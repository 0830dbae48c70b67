//! Pseudo-masking, hybrid input assembly, and state-dependent augmentation.
//!
//! Every cell is in exactly one state per iteration:
//! ground truth (`m_c = 0`), pseudo missing (`m_p = 1`) or missing (`m = 1`).

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureLayout, Slot};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};
use crate::schedule::one_hot;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellState {
    GroundTruth,
    PseudoMissing,
    Missing,
}

/// Real-missing, pseudo-missing and condition masks of equal shape.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub m: Matrix,
    pub m_p: Matrix,
    pub m_c: Matrix,
}

impl MaskSet {
    /// Assembles a mask set, checking `m ⊙ m_p = 0` and binary entries.
    pub fn new(m: Matrix, m_p: Matrix) -> Result<Self> {
        if m.shape() != m_p.shape() {
            return Err(Error::DimensionMismatch {
                op: "MaskSet::new",
                left: m.shape(),
                right: m_p.shape(),
            });
        }
        let binary = |x: &f64| *x == 0.0 || *x == 1.0;
        if !m.as_slice().iter().all(binary) || !m_p.as_slice().iter().all(binary) {
            return Err(Error::invalid("masks must be binary"));
        }
        if m.as_slice()
            .iter()
            .zip(m_p.as_slice())
            .any(|(a, b)| a * b != 0.0)
        {
            return Err(Error::invalid("pseudo mask overlaps the missing mask"));
        }
        let m_c = m.add(&m_p)?;
        Ok(Self { m, m_p, m_c })
    }

    /// Inference-time set: no pseudo-masking, `m_c = m`.
    pub fn inference(m: Matrix) -> Result<Self> {
        let zeros = Matrix::zeros(m.rows(), m.cols());
        Self::new(m, zeros)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    pub fn state(&self, i: usize, j: usize) -> CellState {
        if self.m[(i, j)] != 0.0 {
            CellState::Missing
        } else if self.m_p[(i, j)] != 0.0 {
            CellState::PseudoMissing
        } else {
            CellState::GroundTruth
        }
    }

    /// Broadcasts per-column masks to the encoded layout.
    pub fn expand(&self, layout: &FeatureLayout) -> Result<MaskSet> {
        Ok(MaskSet {
            m: layout.expand(&self.m)?,
            m_p: layout.expand(&self.m_p)?,
            m_c: layout.expand(&self.m_c)?,
        })
    }
}

/// `m_p ~ Bernoulli((1 - m) · r_m)`, then `m_c = m + m_p`.
pub fn sample_pseudo_mask(m: &Matrix, remask: f64, rng: &mut RngStream) -> Result<MaskSet> {
    if !(0.0..=1.0).contains(&remask) {
        return Err(Error::invalid(format!(
            "remask ratio {remask} outside [0, 1]"
        )));
    }
    let probs = m.map(|v| (1.0 - v) * remask);
    let m_p = rng.sample_bernoulli(&probs)?;
    MaskSet::new(m.clone(), m_p)
}

/// `x̃ = x0 ⊙ (1 - m_c) + x_t ⊙ m_c`
pub fn assemble_hybrid(x0_padded: &Matrix, x_t: &Matrix, m_c: &Matrix) -> Result<Matrix> {
    if x0_padded.shape() != x_t.shape() || x0_padded.shape() != m_c.shape() {
        return Err(Error::DimensionMismatch {
            op: "assemble_hybrid",
            left: x0_padded.shape(),
            right: if x0_padded.shape() != x_t.shape() {
                x_t.shape()
            } else {
                m_c.shape()
            },
        });
    }
    let mut out = x0_padded.clone();
    for ((o, &xt), &c) in out
        .as_mut_slice()
        .iter_mut()
        .zip(x_t.as_slice())
        .zip(m_c.as_slice())
    {
        if c != 0.0 {
            *o = xt;
        }
    }
    Ok(out)
}

/// Perturbation strengths by cell state, written `[gt, pm, ms]` in configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct PerturbStrengths {
    pub ground_truth: f64,
    pub pseudo_missing: f64,
    pub missing: f64,
}

impl PerturbStrengths {
    pub fn new(ground_truth: f64, pseudo_missing: f64, missing: f64) -> Result<Self> {
        let s = Self {
            ground_truth,
            pseudo_missing,
            missing,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ground_truth >= 0.0
            && self.ground_truth < self.pseudo_missing
            && self.pseudo_missing < self.missing
            && self.missing.is_finite();
        if !ok {
            return Err(Error::invalid(format!(
                "perturbation strengths must satisfy 0 <= gt < pm < ms, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ground_truth, self.pseudo_missing, self.missing]
    }
}

impl TryFrom<[f64; 3]> for PerturbStrengths {
    type Error = Error;

    fn try_from([gt, pm, ms]: [f64; 3]) -> Result<Self> {
        Self::new(gt, pm, ms)
    }
}

impl From<PerturbStrengths> for [f64; 3] {
    fn from(s: PerturbStrengths) -> Self {
        s.as_array()
    }
}

/// How ground-truth cells are selected in the strength field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrengthRule {
    /// States partition the cells: GT where `m_c = 0`.
    #[default]
    Disjoint,
    /// GT weight applied wherever `m = 0`, so PM cells get `p_GT + p_PM`.
    Literal,
}

/// Per-cell perturbation strength.
pub fn strength_field(masks: &MaskSet, s: &PerturbStrengths, rule: StrengthRule) -> Matrix {
    let gt_mask = match rule {
        StrengthRule::Disjoint => &masks.m_c,
        StrengthRule::Literal => &masks.m,
    };
    Matrix::from_fn(masks.m.rows(), masks.m.cols(), |i, j| {
        (1.0 - gt_mask[(i, j)]) * s.ground_truth
            + masks.m_p[(i, j)] * s.pseudo_missing
            + masks.m[(i, j)] * s.missing
    })
}

/// Adds `ξ ⊙ p` on numerical cells and, on categorical blocks, replaces the
/// one-hot with a uniformly drawn category with probability `clamp(p, 0, 1)`.
///
/// `field` is per table column (`n × d`); `xi` matches the encoded shape.
pub fn augment(
    x_tilde: &Matrix,
    field: &Matrix,
    xi: &Matrix,
    layout: &FeatureLayout,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if x_tilde.shape() != xi.shape() {
        return Err(Error::DimensionMismatch {
            op: "augment",
            left: x_tilde.shape(),
            right: xi.shape(),
        });
    }
    if field.shape() != (x_tilde.rows(), layout.n_columns()) || x_tilde.cols() != layout.width() {
        return Err(Error::DimensionMismatch {
            op: "augment field",
            left: (x_tilde.rows(), layout.n_columns()),
            right: field.shape(),
        });
    }
    let mut out = x_tilde.clone();
    for i in 0..out.rows() {
        for (j, slot) in layout.slots().iter().enumerate() {
            let p = field[(i, j)];
            match *slot {
                Slot::Numerical { pos } => {
                    if p != 0.0 {
                        out[(i, pos)] += xi[(i, pos)] * p;
                    }
                }
                Slot::Categorical { offset, k, .. } => {
                    let u = rng.uniform();
                    if u < p.clamp(0.0, 1.0) {
                        let c = rng.uniform_index(k);
                        out.row_mut(i)[offset..offset + k].copy_from_slice(&one_hot(c, k));
                    }
                }
            }
        }
    }
    Ok(out)
}
