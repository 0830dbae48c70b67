//! Two-channel training loop.
//!
//! Each minibatch remasks a share of the observed cells, builds two noisy
//! hybrid inputs that share the same condition mask but have independent
//! `(t, ε, ξ)`, and minimizes
//!
//! ```text
//! L = L_dm(channel 1) + L_dm(channel 2) + γ · L_sa(channel 1, channel 2)
//! ```
//!
//! where `L_dm` is supervised on pseudo-missing cells only and `L_sa` aligns
//! the two channels on condition-masked cells.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{average_pad, normalize, FeatureLayout, NormalizationParams, Table};
use crate::denoiser::{Adam, Architecture, Checkpoint, Denoiser, DenoiserParams, Prediction};
use crate::error::{Error, Result};
use crate::masking::{
    assemble_hybrid, augment, sample_pseudo_mask, strength_field, MaskSet, PerturbStrengths,
    StrengthRule,
};
use crate::numeric::{softmax, Matrix, Precision, RngStream};
use crate::schedule::{Schedule, ScheduleKind};

pub const DEFAULT_REMASK: f64 = 0.2;
pub const DEFAULT_BATCH: usize = 128;

/// Trade-off weights from the tuning grid.
pub const GAMMA_GRID: [f64; 6] = [0.2, 0.5, 1.0, 3.0, 5.0, 10.0];

/// Strength triples from the tuning grid.
pub const STRENGTH_GRID: [[f64; 3]; 4] = [
    [1e-4, 0.08, 0.1],
    [1e-4, 0.4, 0.5],
    [1e-3, 0.8, 1.0],
    [1e-3, 2.0, 3.0],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Diffusion steps `T`.
    pub steps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub layers: usize,
    pub hidden: usize,
    /// Weight of the alignment loss; 0 disables it.
    pub gamma: f64,
    /// Share of observed cells remasked per iteration.
    pub remask: f64,
    pub strengths: PerturbStrengths,
    pub strength_rule: StrengthRule,
    /// State-dependent augmentation on or off.
    pub augment: bool,
    pub batch: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    /// Matrix-product arithmetic of the network.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            epochs: 2000,
            lr: 1e-3,
            layers: 3,
            hidden: 256,
            gamma: 1.0,
            remask: DEFAULT_REMASK,
            strengths: PerturbStrengths {
                ground_truth: 1e-4,
                pseudo_missing: 0.08,
                missing: 0.1,
            },
            strength_rule: StrengthRule::Disjoint,
            augment: true,
            batch: DEFAULT_BATCH,
            seed: 0,
            schedule: ScheduleKind::Respaced,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// Same configuration with alignment and augmentation switched off.
    pub fn base_model(&self) -> Self {
        Self {
            gamma: 0.0,
            augment: false,
            ..self.clone()
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            layers: self.layers,
            hidden: self.hidden,
            steps: self.steps,
            schedule: self.schedule,
            precision: self.precision,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        self.strengths.validate()?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.remask) {
            return Err(Error::invalid(format!(
                "remask must be in [0, 1], got {}",
                self.remask
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub dm1: f64,
    pub dm2: f64,
    pub sa: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossParts,
    pub ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn losses(&self) -> Vec<LossParts> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Average-padded training matrix and its per-column missing mask.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub x0: Matrix,
    pub mask: Matrix,
    pub layout: FeatureLayout,
}

impl TrainData {
    /// `table` must already be normalized; nulls mark missing cells.
    pub fn from_normalized(table: &Table) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::EmptyInput("training table has no rows".into()));
        }
        let mask = table.null_mask();
        let padded = average_pad(table, &mask)?;
        Ok(Self {
            x0: padded.matrix,
            mask,
            layout: padded.layout,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x0.rows()
    }
}

/// One denoiser input.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub x: Matrix,
    pub t: Vec<usize>,
}

/// Everything random about one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub x0: Matrix,
    pub masks: MaskSet,
    pub channels: [Channel; 2],
}

/// Noises `x0` to per-row steps `t`: Gaussian on numerical columns,
/// multinomial on categorical blocks.
pub fn noise_rows(
    x0: &Matrix,
    t: &[usize],
    layout: &FeatureLayout,
    sched: &Schedule,
    rng: &mut RngStream,
) -> Result<Matrix> {
    let mut out = x0.clone();
    for (i, &s) in t.iter().enumerate() {
        sched.check_step(s)?;
        let ab = sched.alpha_bar(s);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let row = out.row_mut(i);
        for v in &mut row[..layout.num_dim()] {
            *v = a * *v + b * rng.standard_normal();
        }
        for (_, offset, k, _) in layout.categorical() {
            let block = &mut row[offset..offset + k];
            let probs: Vec<f64> = block
                .iter()
                .map(|&p| ab * p + (1.0 - ab) / k as f64)
                .collect();
            let c = rng.sample_categorical(&probs)?;
            block.fill(0.0);
            block[c] = 1.0;
        }
    }
    Ok(out)
}

pub fn prepare_batch(
    x0: &Matrix,
    mask: &Matrix,
    layout: &FeatureLayout,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<StepBatch> {
    let n = x0.rows();
    let masks = sample_pseudo_mask(mask, cfg.remask, rng)?;
    let m_c = layout.expand(&masks.m_c)?;
    let field = cfg
        .augment
        .then(|| strength_field(&masks, &cfg.strengths, cfg.strength_rule));
    let channel = |rng: &mut RngStream| -> Result<Channel> {
        let t: Vec<usize> = (0..n)
            .map(|_| 1 + rng.uniform_index(sched.steps()))
            .collect();
        let x_t = noise_rows(x0, &t, layout, sched, rng)?;
        let mut x = assemble_hybrid(x0, &x_t, &m_c)?;
        if let Some(field) = &field {
            let xi = rng.sample_gaussian(n, layout.width());
            x = augment(&x, field, &xi, layout, rng)?;
        }
        Ok(Channel { x, t })
    };
    let c1 = channel(rng)?;
    let c2 = channel(rng)?;
    Ok(StepBatch {
        x0: x0.clone(),
        masks,
        channels: [c1, c2],
    })
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn true_class(block: &[f64]) -> usize {
    crate::dataset::argmax(block)
}

fn dm_terms(
    x0: &Matrix,
    pred: &Prediction,
    m_p: &Matrix,
    layout: &FeatureLayout,
    grad: Option<&mut Prediction>,
) -> f64 {
    let n = x0.rows();
    let (mut n_num, mut n_cat) = (0usize, 0usize);
    for i in 0..n {
        for (j, _) in layout.numerical_columns() {
            n_num += (m_p[(i, j)] != 0.0) as usize;
        }
        for (j, ..) in layout.categorical() {
            n_cat += (m_p[(i, j)] != 0.0) as usize;
        }
    }
    let mut grad = grad;
    let (mut num, mut cat) = (0.0, 0.0);
    for i in 0..n {
        for (j, pos) in layout.numerical_columns() {
            if m_p[(i, j)] != 0.0 {
                let r = pred.numerical[(i, pos)] - x0[(i, pos)];
                num += r * r;
                if let Some(g) = grad.as_deref_mut() {
                    g.numerical[(i, pos)] += 2.0 * r / n_num as f64;
                }
            }
        }
        for (j, offset, k, head) in layout.categorical() {
            if m_p[(i, j)] != 0.0 {
                let y = true_class(&x0.row(i)[offset..offset + k]);
                let logits = pred.categorical[head].row(i);
                cat -= log_softmax(logits)[y];
                if let Some(g) = grad.as_deref_mut() {
                    let s = softmax(logits);
                    let row = g.categorical[head].row_mut(i);
                    for (c, (gv, sv)) in row.iter_mut().zip(s).enumerate() {
                        *gv += (sv - (c == y) as u8 as f64) / n_cat as f64;
                    }
                }
            }
        }
    }
    let mut loss = 0.0;
    if n_num > 0 {
        loss += num / n_num as f64;
    }
    if n_cat > 0 {
        loss += cat / n_cat as f64;
    }
    loss
}

/// Squared error on pseudo-missing numerical cells plus cross-entropy on
/// pseudo-missing categorical cells, each averaged over its own count.
/// Zero when nothing is pseudo-masked.
pub fn dm_loss(x0: &Matrix, pred: &Prediction, m_p: &Matrix, layout: &FeatureLayout) -> f64 {
    dm_terms(x0, pred, m_p, layout, None)
}

fn sa_terms(
    p1: &Prediction,
    p2: &Prediction,
    m_c: &Matrix,
    layout: &FeatureLayout,
    grads: Option<(&mut Prediction, &mut Prediction)>,
) -> f64 {
    let n = p1.rows();
    let (mut n_num, mut n_cat) = (0usize, 0usize);
    for i in 0..n {
        for (j, _) in layout.numerical_columns() {
            n_num += (m_c[(i, j)] != 0.0) as usize;
        }
        for (j, _, k, _) in layout.categorical() {
            n_cat += (m_c[(i, j)] != 0.0) as usize * k;
        }
    }
    let mut grads = grads;
    let (mut num, mut cat) = (0.0, 0.0);
    for i in 0..n {
        for (j, pos) in layout.numerical_columns() {
            if m_c[(i, j)] != 0.0 {
                let r = p1.numerical[(i, pos)] - p2.numerical[(i, pos)];
                num += r * r;
                if let Some((g1, g2)) = grads.as_mut() {
                    let g = 2.0 * r / n_num as f64;
                    g1.numerical[(i, pos)] += g;
                    g2.numerical[(i, pos)] -= g;
                }
            }
        }
        for (j, _, _, head) in layout.categorical() {
            if m_c[(i, j)] != 0.0 {
                let s1 = softmax(p1.categorical[head].row(i));
                let s2 = softmax(p2.categorical[head].row(i));
                let diff: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
                cat += diff.iter().map(|d| d * d).sum::<f64>();
                if let Some((g1, g2)) = grads.as_mut() {
                    let gs: Vec<f64> = diff.iter().map(|d| 2.0 * d / n_cat as f64).collect();
                    softmax_backward(&s1, &gs, 1.0, g1.categorical[head].row_mut(i));
                    softmax_backward(&s2, &gs, -1.0, g2.categorical[head].row_mut(i));
                }
            }
        }
    }
    let mut loss = 0.0;
    if n_num > 0 {
        loss += num / n_num as f64;
    }
    if n_cat > 0 {
        loss += cat / n_cat as f64;
    }
    loss
}

/// `out += sign · J_softmaxᵀ g`
fn softmax_backward(s: &[f64], g: &[f64], sign: f64, out: &mut [f64]) {
    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &sv), &gv) in out.iter_mut().zip(s).zip(g) {
        *o += sign * sv * (gv - dot);
    }
}

/// Mean squared channel disagreement on condition-masked cells: numerical
/// values plus categorical softmax scores (averaged per score entry).
pub fn alignment_loss(
    p1: &Prediction,
    p2: &Prediction,
    m_c: &Matrix,
    layout: &FeatureLayout,
) -> f64 {
    sa_terms(p1, p2, m_c, layout, None)
}

/// Total loss of one step without gradients.
pub fn two_channel_loss(model: &Denoiser, batch: &StepBatch, gamma: f64) -> Result<LossParts> {
    let layout = &model.layout;
    let [c1, c2] = &batch.channels;
    let p1 = model.forward(&c1.x, &c1.t, &batch.masks.m_c)?.0;
    let p2 = model.forward(&c2.x, &c2.t, &batch.masks.m_c)?.0;
    let dm1 = dm_loss(&batch.x0, &p1, &batch.masks.m_p, layout);
    let dm2 = dm_loss(&batch.x0, &p2, &batch.masks.m_p, layout);
    let sa = alignment_loss(&p1, &p2, &batch.masks.m_c, layout);
    Ok(LossParts {
        dm1,
        dm2,
        sa,
        total: dm1 + dm2 + gamma * sa,
    })
}

/// Total loss of one step and its gradient with respect to every parameter.
pub fn two_channel_loss_grad(
    model: &Denoiser,
    batch: &StepBatch,
    gamma: f64,
) -> Result<(LossParts, DenoiserParams)> {
    let layout = &model.layout;
    let n = batch.x0.rows();
    let [c1, c2] = &batch.channels;
    // both channels go through the network as one stacked batch; parameter
    // gradients of a row-stacked batch are the sums of the per-channel ones
    let x = Matrix::vstack(&c1.x, &c2.x)?;
    let t: Vec<usize> = c1.t.iter().chain(&c2.t).copied().collect();
    let m_c = Matrix::vstack(&batch.masks.m_c, &batch.masks.m_c)?;
    let (p, cache) = model.forward(&x, &t, &m_c)?;
    let (p1, p2) = (p.row_range(0, n), p.row_range(n, 2 * n));
    let mut g1 = Prediction::zeros(n, layout);
    let mut g2 = Prediction::zeros(n, layout);
    let dm1 = dm_terms(&batch.x0, &p1, &batch.masks.m_p, layout, Some(&mut g1));
    let dm2 = dm_terms(&batch.x0, &p2, &batch.masks.m_p, layout, Some(&mut g2));
    let sa = if gamma > 0.0 {
        let mut a1 = Prediction::zeros(n, layout);
        let mut a2 = Prediction::zeros(n, layout);
        let sa = sa_terms(&p1, &p2, &batch.masks.m_c, layout, Some((&mut a1, &mut a2)));
        add_scaled(&mut g1, gamma, &a1)?;
        add_scaled(&mut g2, gamma, &a2)?;
        sa
    } else {
        alignment_loss(&p1, &p2, &batch.masks.m_c, layout)
    };
    let grads = model.backward(&cache, &Prediction::vstack(&g1, &g2)?)?;
    Ok((
        LossParts {
            dm1,
            dm2,
            sa,
            total: dm1 + dm2 + gamma * sa,
        },
        grads,
    ))
}

fn add_scaled(g: &mut Prediction, alpha: f64, other: &Prediction) -> Result<()> {
    g.numerical.axpy(alpha, &other.numerical)?;
    for (a, b) in g.categorical.iter_mut().zip(&other.categorical) {
        a.axpy(alpha, b)?;
    }
    Ok(())
}

/// Training state: model, optimizer and trace so far.
pub struct Trainer {
    pub model: Denoiser,
    pub trace: TrainTrace,
    config: TrainConfig,
    optimizer: Adam,
    schedule: Schedule,
    epoch: usize,
}

impl Trainer {
    pub fn new(layout: FeatureLayout, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Denoiser::new(config.architecture(), layout, config.seed)?;
        let optimizer = Adam::new(&model.params, config.lr);
        Ok(Self {
            model,
            trace: TrainTrace::default(),
            config: config.clone(),
            optimizer,
            schedule: Schedule::new(config.steps, config.schedule)?,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// One shuffled pass over all rows in minibatches.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<LossParts> {
        if data.layout != self.model.layout {
            return Err(Error::SchemaMismatch(
                "training data layout differs from the model".into(),
            ));
        }
        let start = Instant::now();
        self.epoch += 1;
        let mut rng = RngStream::derive(self.config.seed, "train", self.epoch as u64, 0);
        let mut order: Vec<usize> = (0..data.n_rows()).collect();
        rng.shuffle(&mut order);
        let mut acc = LossParts::default();
        let mut batches = 0usize;
        for idx in order.chunks(self.config.batch) {
            let x0 = data.x0.select_rows(idx);
            let mask = data.mask.select_rows(idx);
            let batch = prepare_batch(
                &x0,
                &mask,
                &self.model.layout,
                &self.schedule,
                &self.config,
                &mut rng,
            )?;
            if batch.masks.m_p.sum() == 0.0 {
                log::debug!(
                    "epoch {}: minibatch without pseudo-missing cells",
                    self.epoch
                );
            }
            let (loss, grads) = two_channel_loss_grad(&self.model, &batch, self.config.gamma)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                log::error!(
                    "non-finite loss at epoch {} batch {batches}: {loss:?}",
                    self.epoch
                );
                return Err(Error::NonFinite {
                    stage: "training loss".into(),
                    step: self.epoch,
                });
            }
            self.optimizer.step(&mut self.model.params, &grads)?;
            acc.dm1 += loss.dm1;
            acc.dm2 += loss.dm2;
            acc.sa += loss.sa;
            acc.total += loss.total;
            batches += 1;
        }
        let b = batches as f64;
        let loss = LossParts {
            dm1: acc.dm1 / b,
            dm2: acc.dm2 / b,
            sa: acc.sa / b,
            total: acc.total / b,
        };
        self.trace.records.push(EpochRecord {
            epoch: self.epoch,
            loss,
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(loss)
    }

    pub fn run(&mut self, data: &TrainData) -> Result<()> {
        while self.epoch < self.config.epochs {
            let loss = self.run_epoch(data)?;
            if self.epoch.is_multiple_of(100) || self.epoch == self.config.epochs {
                log::info!("epoch {} loss {:.6}", self.epoch, loss.total);
            }
        }
        Ok(())
    }
}

/// Trains on already-normalized data.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<(Denoiser, TrainTrace)> {
    let mut trainer = Trainer::new(data.layout.clone(), config)?;
    trainer.run(data)?;
    Ok((trainer.model, trainer.trace))
}

/// Normalizes a raw table with nulls, trains, and bundles a checkpoint.
pub fn fit(table: &Table, config: &TrainConfig) -> Result<(Checkpoint, TrainTrace)> {
    let (normalized, params) = normalize(table)?;
    let data = TrainData::from_normalized(&normalized)?;
    let (model, trace) = train(&data, config)?;
    let ckpt = checkpoint_for(model, table, params, config)?;
    Ok((ckpt, trace))
}

pub fn checkpoint_for(
    model: Denoiser,
    table: &Table,
    params: NormalizationParams,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    Checkpoint::new(
        model,
        table.schema().to_vec(),
        params,
        serde_json::to_value(config)?,
    )
}
