//! Plain-MLP value-prediction denoiser with time and mask embeddings.
//!
//! ```text
//! h1      = silu(x̃ W_in + b_in + E[t] + m_c W_m)
//! h_{l+1} = silu(h_l W_l + b_l)
//! num     = h W_num + b_num
//! cat_j   = h W_j + b_j          (logits per categorical column)
//! ```

mod adam;
mod checkpoint;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, MAGIC};

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureLayout;
use crate::error::{Error, Result};
use crate::numeric::{gemm_with, sigmoid, softmax, Matrix, Op, Precision, RngStream};
use crate::schedule::ScheduleKind;

/// Layer counts and hidden widths from the tuning grid.
pub const GRID_LAYERS: [usize; 3] = [3, 4, 5];
pub const GRID_HIDDEN: [usize; 3] = [256, 512, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Linear layers from input to head, `>= 2`.
    pub layers: usize,
    pub hidden: usize,
    /// Diffusion steps `T`; the time table has `T + 1` rows.
    pub steps: usize,
    /// Noise schedule shared by training and imputation.
    #[serde(default)]
    pub schedule: ScheduleKind,
    /// Arithmetic of matrix products and the SiLU gate; everything else is `f64`.
    #[serde(default)]
    pub precision: Precision,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.hidden == 0 || self.steps == 0 {
            return Err(Error::invalid(format!(
                "architecture needs layers >= 2, hidden >= 1, steps >= 1; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn on_grid(&self) -> bool {
        GRID_LAYERS.contains(&self.layers) && GRID_HIDDEN.contains(&self.hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in × fan_out`
    pub w: Matrix,
    /// `1 × fan_out`
    pub b: Matrix,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |_, _| (2.0 * rng.uniform() - 1.0) * bound;
        let w = Matrix::from_fn(fan_in, fan_out, &mut draw);
        let b = Matrix::from_fn(1, fan_out, &mut draw);
        Self { w, b }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: Matrix::zeros(1, self.b.cols()),
        }
    }

    fn apply(&self, x: &Matrix, prec: Precision) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), self.w.cols());
        gemm_with(prec, 1.0, x, Op::N, &self.w, Op::N, 0.0, &mut out)?;
        out.add_row_vector(self.b.as_slice());
        Ok(out)
    }

    /// Accumulates `dW = xᵀ g` and `db = Σ g`.
    fn backward(&self, x: &Matrix, g: &Matrix, grad: &mut Linear, prec: Precision) -> Result<()> {
        gemm_with(prec, 1.0, x, Op::T, g, Op::N, 1.0, &mut grad.w)?;
        g.accumulate_col_sums(grad.b.as_mut_slice());
        Ok(())
    }
}

/// All trainable tensors. Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub input: Linear,
    pub hidden: Vec<Linear>,
    /// `(T + 1) × hidden`, indexed by step.
    pub time_emb: Matrix,
    /// `d × hidden`, `d` the number of table columns.
    pub mask_proj: Matrix,
    pub num_head: Linear,
    pub cat_heads: Vec<Linear>,
}

impl DenoiserParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.zeros_like(),
            hidden: self.hidden.iter().map(Linear::zeros_like).collect(),
            time_emb: Matrix::zeros(self.time_emb.rows(), self.time_emb.cols()),
            mask_proj: Matrix::zeros(self.mask_proj.rows(), self.mask_proj.cols()),
            num_head: self.num_head.zeros_like(),
            cat_heads: self.cat_heads.iter().map(Linear::zeros_like).collect(),
        }
    }

    /// Tensors in serialization order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.input.w, &self.input.b];
        for l in &self.hidden {
            out.extend([&l.w, &l.b]);
        }
        out.extend([
            &self.time_emb,
            &self.mask_proj,
            &self.num_head.w,
            &self.num_head.b,
        ]);
        for l in &self.cat_heads {
            out.extend([&l.w, &l.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input.w, &mut self.input.b];
        for l in &mut self.hidden {
            out.extend([&mut l.w, &mut l.b]);
        }
        out.extend([
            &mut self.time_emb,
            &mut self.mask_proj,
            &mut self.num_head.w,
            &mut self.num_head.b,
        ]);
        for l in &mut self.cat_heads {
            out.extend([&mut l.w, &mut l.b]);
        }
        out
    }

    /// Names matching [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["input.w".to_string(), "input.b".to_string()];
        for i in 0..self.hidden.len() {
            out.extend([format!("hidden{i}.w"), format!("hidden{i}.b")]);
        }
        out.extend(["time_emb", "mask_proj", "num_head.w", "num_head.b"].map(String::from));
        for i in 0..self.cat_heads.len() {
            out.extend([format!("cat_head{i}.w"), format!("cat_head{i}.b")]);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &DenoiserParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }
}

/// Numerical values and per-column categorical logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub numerical: Matrix,
    pub categorical: Vec<Matrix>,
}

impl Prediction {
    pub fn zeros(rows: usize, layout: &FeatureLayout) -> Self {
        Self {
            numerical: Matrix::zeros(rows, layout.num_dim()),
            categorical: layout
                .cat_sizes()
                .iter()
                .map(|&k| Matrix::zeros(rows, k))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.numerical.rows()
    }

    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self {
            numerical: self.numerical.row_range(start, end),
            categorical: self
                .categorical
                .iter()
                .map(|m| m.row_range(start, end))
                .collect(),
        }
    }

    pub fn vstack(top: &Self, bottom: &Self) -> Result<Self> {
        Ok(Self {
            numerical: Matrix::vstack(&top.numerical, &bottom.numerical)?,
            categorical: top
                .categorical
                .iter()
                .zip(&bottom.categorical)
                .map(|(a, b)| Matrix::vstack(a, b))
                .collect::<Result<_>>()?,
        })
    }

    /// Encoded-width matrix: numerical values and softmax probabilities.
    pub fn to_encoded(&self, layout: &FeatureLayout) -> Matrix {
        let n = self.rows();
        let mut out = Matrix::zeros(n, layout.width());
        for i in 0..n {
            let row = out.row_mut(i);
            row[..layout.num_dim()].copy_from_slice(self.numerical.row(i));
            for (_, offset, k, head) in layout.categorical() {
                row[offset..offset + k].copy_from_slice(&softmax(self.categorical[head].row(i)));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.numerical.is_finite() && self.categorical.iter().all(Matrix::is_finite)
    }
}

/// Anything that predicts `x̂_0` from `(x̃_t, t, mask)`.
pub trait Denoise {
    fn layout(&self) -> &FeatureLayout;
    fn steps(&self) -> usize;
    fn predict(&self, x: &Matrix, t: &[usize], mask: &Matrix) -> Result<Prediction>;
}

/// Activations kept for [`Denoiser::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Matrix,
    mask: Matrix,
    t: Vec<usize>,
    /// Activation derivative `silu'(z)` of each hidden layer.
    slope: Vec<Matrix>,
    /// Post-activations of each hidden layer.
    act: Vec<Matrix>,
    n_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub arch: Architecture,
    pub layout: FeatureLayout,
    pub params: DenoiserParams,
}

/// `(silu(z), silu'(z))` written over `z` and into `slope`.
/// SiLU in place; returns its derivative. The gate is evaluated at the
/// model's gemm precision.
fn silu_in_place(z: &mut Matrix, precision: Precision) -> Matrix {
    let gate = match precision {
        Precision::F64 => sigmoid,
        Precision::F32 => |x: f64| f64::from(1.0 / (1.0 + (-(x as f32)).exp())),
    };
    let mut slope = Matrix::zeros(z.rows(), z.cols());
    for (v, d) in z.as_mut_slice().iter_mut().zip(slope.as_mut_slice()) {
        let s = gate(*v);
        *d = s * (1.0 + *v * (1.0 - s));
        *v *= s;
    }
    slope
}

impl Denoiser {
    /// Kaiming-uniform weights `U(±1/√fan_in)`, time table `N(0, 1)`.
    pub fn new(arch: Architecture, layout: FeatureLayout, seed: u64) -> Result<Self> {
        arch.validate()?;
        if layout.n_columns() == 0 {
            return Err(Error::EmptyInput(
                "denoiser needs at least one column".into(),
            ));
        }
        let mut rng = RngStream::derive(seed, "denoiser-init", 0, 0);
        let h = arch.hidden;
        let input = Linear::init(layout.width(), h, &mut rng);
        let hidden = (0..arch.layers - 2)
            .map(|_| Linear::init(h, h, &mut rng))
            .collect();
        let time_emb = rng.sample_gaussian(arch.steps + 1, h);
        let bound = 1.0 / (layout.n_columns() as f64).sqrt();
        let mask_proj = Matrix::from_fn(layout.n_columns(), h, |_, _| {
            (2.0 * rng.uniform() - 1.0) * bound
        });
        let num_head = Linear::init(h, layout.num_dim(), &mut rng);
        let cat_heads = layout
            .cat_sizes()
            .iter()
            .map(|&k| Linear::init(h, k, &mut rng))
            .collect();
        Ok(Self {
            arch,
            layout,
            params: DenoiserParams {
                input,
                hidden,
                time_emb,
                mask_proj,
                num_head,
                cat_heads,
            },
        })
    }

    fn check_inputs(&self, x: &Matrix, t: &[usize], mask: &Matrix) -> Result<()> {
        if x.cols() != self.layout.width() {
            return Err(Error::SchemaMismatch(format!(
                "denoiser expects {} encoded columns, got {}",
                self.layout.width(),
                x.cols()
            )));
        }
        if mask.shape() != (x.rows(), self.layout.n_columns()) {
            return Err(Error::DimensionMismatch {
                op: "denoiser mask",
                left: (x.rows(), self.layout.n_columns()),
                right: mask.shape(),
            });
        }
        if t.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                op: "denoiser steps",
                left: (x.rows(), 1),
                right: (t.len(), 1),
            });
        }
        if let Some(&bad) = t.iter().find(|&&s| s > self.arch.steps) {
            return Err(Error::invalid(format!(
                "step {bad} outside [0, {}]",
                self.arch.steps
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        x: &Matrix,
        t: &[usize],
        mask: &Matrix,
    ) -> Result<(Prediction, ForwardCache)> {
        self.check_inputs(x, t, mask)?;
        let p = &self.params;
        let prec = self.arch.precision;
        let mut z = p.input.apply(x, prec)?;
        gemm_with(prec, 1.0, mask, Op::N, &p.mask_proj, Op::N, 1.0, &mut z)?;
        for (i, &s) in t.iter().enumerate() {
            for (v, e) in z.row_mut(i).iter_mut().zip(p.time_emb.row(s)) {
                *v += e;
            }
        }
        let mut slope = Vec::with_capacity(self.arch.layers - 1);
        let mut act = Vec::with_capacity(self.arch.layers - 1);
        slope.push(silu_in_place(&mut z, self.arch.precision));
        act.push(z);
        for layer in &p.hidden {
            let mut z = layer.apply(act.last().expect("first layer pushed"), prec)?;
            slope.push(silu_in_place(&mut z, self.arch.precision));
            act.push(z);
        }
        let h = act.last().expect("first layer pushed");
        let pred = Prediction {
            numerical: p.num_head.apply(h, prec)?,
            categorical: p
                .cat_heads
                .iter()
                .map(|head| head.apply(h, prec))
                .collect::<Result<_>>()?,
        };
        let cache = ForwardCache {
            x: x.clone(),
            mask: mask.clone(),
            t: t.to_vec(),
            slope,
            act,
            n_params: p.n_params(),
        };
        Ok((pred, cache))
    }

    /// Parameter gradients of a scalar loss given its gradient with respect
    /// to the outputs of the matching [`forward`](Self::forward) call.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Prediction) -> Result<DenoiserParams> {
        let p = &self.params;
        let prec = self.arch.precision;
        if cache.n_params != p.n_params() || cache.act.len() != p.hidden.len() + 1 {
            return Err(Error::invalid("forward cache does not match this model"));
        }
        let n = cache.x.rows();
        if grad_out.numerical.shape() != (n, self.layout.num_dim())
            || grad_out.categorical.len() != p.cat_heads.len()
        {
            return Err(Error::DimensionMismatch {
                op: "denoiser backward",
                left: (n, self.layout.num_dim()),
                right: grad_out.numerical.shape(),
            });
        }
        let mut g = p.zeros_like();
        let last = cache.act.last().expect("non-empty");

        let mut dh = Matrix::zeros(n, self.arch.hidden);
        p.num_head
            .backward(last, &grad_out.numerical, &mut g.num_head, prec)?;
        gemm_with(
            prec,
            1.0,
            &grad_out.numerical,
            Op::N,
            &p.num_head.w,
            Op::T,
            0.0,
            &mut dh,
        )?;
        for ((head, gh), go) in p
            .cat_heads
            .iter()
            .zip(&mut g.cat_heads)
            .zip(&grad_out.categorical)
        {
            head.backward(last, go, gh, prec)?;
            gemm_with(prec, 1.0, go, Op::N, &head.w, Op::T, 1.0, &mut dh)?;
        }

        for l in (0..cache.slope.len()).rev() {
            let dz = dh.hadamard(&cache.slope[l])?;
            if l == 0 {
                p.input.backward(&cache.x, &dz, &mut g.input, prec)?;
                gemm_with(
                    prec,
                    1.0,
                    &cache.mask,
                    Op::T,
                    &dz,
                    Op::N,
                    1.0,
                    &mut g.mask_proj,
                )?;
                for (i, &s) in cache.t.iter().enumerate() {
                    for (e, d) in g.time_emb.row_mut(s).iter_mut().zip(dz.row(i)) {
                        *e += d;
                    }
                }
            } else {
                let layer = &p.hidden[l - 1];
                layer.backward(&cache.act[l - 1], &dz, &mut g.hidden[l - 1], prec)?;
                let mut next = Matrix::zeros(n, self.arch.hidden);
                gemm_with(prec, 1.0, &dz, Op::N, &layer.w, Op::T, 0.0, &mut next)?;
                dh = next;
            }
        }
        Ok(g)
    }
}

impl Denoise for Denoiser {
    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn steps(&self) -> usize {
        self.arch.steps
    }

    fn predict(&self, x: &Matrix, t: &[usize], mask: &Matrix) -> Result<Prediction> {
        Ok(self.forward(x, t, mask)?.0)
    }
}
