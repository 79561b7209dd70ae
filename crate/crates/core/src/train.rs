//! Trimmed-MAE training with L2 weight decay and best-of-N selection.
//!
//! Every mini-batch is ranked by per-sample MAE over all nine outputs; the
//! worst `drop_worst_frac` and the best `drop_best_frac` are ignored before
//! averaging, which aims the optimizer at the bulk of the error
//! distribution rather than its tails.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, reproduction_error_raw};
use crate::nncore::{Model, Tensor};
use crate::patches::PatchTensor;
use crate::stream_rng;

/// Floor applied to raw head outputs before unit-sum normalization.
pub const MIN_COMPONENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" | "sgd_momentum" => Ok(Self::sgd()),
            "adam" => Ok(Self::adam()),
            _ => Err(format!("expected sgd or adam, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub drop_worst_frac: f64,
    pub drop_best_frac: f64,
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a better validation median.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            drop_worst_frac: 0.2,
            drop_best_frac: 0.01,
            l2: 1e-5,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: Optimizer::sgd(),
            patience: Some(10),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        let (w, b) = (self.drop_worst_frac, self.drop_best_frac);
        if !(w >= 0.0 && b >= 0.0 && w + b < 1.0) {
            return bad("drop fractions must be nonnegative and sum below 1");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be nonnegative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Mean absolute difference over the nine outputs.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![target.len()],
            got: vec![pred.len()],
        });
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Subgradient of [`mae_loss`] with respect to `pred` (zero at ties).
pub fn mae_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            if p > t {
                1.0 / n
            } else if p < t {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

fn drop_count(n: usize, frac: f64) -> usize {
    // the guard keeps products like 0.29 * 100 = 28.999999999999996 at 29
    ((n as f64 * frac) + 1e-9).floor() as usize
}

/// Indices kept after dropping `floor(n * drop_worst)` largest and
/// `floor(n * drop_best)` smallest losses, in original order.
///
/// Ranking is a stable ascending sort, so among equal losses the lower
/// index ranks as better: it is the first dropped from the best tail and
/// the last dropped from the worst tail.
pub fn trimmed_indices(losses: &[f64], drop_worst: f64, drop_best: f64) -> Result<Vec<usize>> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let (kw, kb) = (drop_count(n, drop_worst), drop_count(n, drop_best));
    if kw + kb >= n {
        return Err(Error::AllDropped(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut keep: Vec<usize> = order[kb..n - kw].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// `r * sum(w^2)` over weight tensors; biases are not penalized.
pub fn l2_penalty(model: &Model, r: f64) -> f64 {
    model
        .params()
        .iter()
        .zip(model.param_info())
        .filter(|(_, info)| info.is_weight)
        .map(|(t, _)| t.data().iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
        * r
}

/// Adds `2 r w` to the gradients of weight tensors.
pub fn add_l2_grad(model: &Model, r: f64, grads: &mut [Tensor]) {
    for ((p, info), g) in model.params().iter().zip(model.param_info()).zip(grads) {
        if info.is_weight {
            for (gv, w) in g.data_mut().iter_mut().zip(p.data()) {
                *gv += 2.0 * r * w;
            }
        }
    }
}

pub fn patch_input(model: &Model, patch: &PatchTensor) -> Result<Tensor> {
    Tensor::from_f32(model.input_shape().to_vec(), &patch.data)
}

/// Normalized head-0 estimate from raw network outputs.
pub fn head_estimate(raw: &[f64], head: usize) -> [f64; 3] {
    let v: [f64; 3] = std::array::from_fn(|c| raw[3 * head + c].max(MIN_COMPONENT));
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}

/// Reproduction error of head 0 against the dominant target, per patch.
pub fn validation_errors(model: &Model, patches: &[PatchTensor]) -> Result<Vec<f64>> {
    patches
        .iter()
        .map(|p| {
            let raw = model.forward(&patch_input(model, p)?)?;
            let t = p.target_f64();
            reproduction_error_raw([t[0], t[1], t[2]], head_estimate(&raw, 0))
        })
        .collect()
}

/// Loss and gradient for one mini-batch: trimmed mean MAE plus L2.
pub fn batch_gradient(
    model: &Model,
    patches: &[PatchTensor],
    batch: &[usize],
    config: &TrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let inputs: Vec<Tensor> = batch
        .iter()
        .map(|&i| patch_input(model, &patches[i]))
        .collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(batch.len());
    for (x, &i) in inputs.iter().zip(batch) {
        let pred = model.forward(x)?;
        losses.push(mae_loss(&pred, &patches[i].target_f64()).unwrap_or(f64::NAN));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Ok((f64::NAN, model.zero_grads()));
    }
    let keep = trimmed_indices(&losses, config.drop_worst_frac, config.drop_best_frac)?;
    let scale = 1.0 / keep.len() as f64;
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for &k in &keep {
        let trace = model.forward_trace(&inputs[k])?;
        let g: Vec<f64> = mae_grad(trace.output(), &patches[batch[k]].target_f64())
            .into_iter()
            .map(|v| v * scale)
            .collect();
        model.backward(&trace, &g, &mut grads, false);
        loss += losses[k] * scale;
    }
    loss += l2_penalty(model, config.l2);
    add_l2_grad(model, config.l2, &mut grads);
    Ok((loss, grads))
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, model: &Model) -> Self {
        Self {
            kind,
            lr,
            m: model.zero_grads(),
            v: model.zero_grads(),
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut Model, grads: &[Tensor]) {
        self.step += 1;
        let lr = self.lr;
        for (i, p) in model.params_mut().into_iter().enumerate() {
            let g = grads[i].data();
            match self.kind {
                Optimizer::SgdMomentum { momentum } => {
                    let m = self.m[i].data_mut();
                    for ((w, mv), gv) in p.data_mut().iter_mut().zip(m).zip(g) {
                        *mv = momentum * *mv + gv;
                        *w -= lr * *mv;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for (((w, mv), vv), gv) in p.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *w -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
            }
        }
        model.round_params_to_f32();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_median_deg: f64,
    pub val_mean_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters `model` holds; 0 means untrained.
    pub best_epoch: usize,
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation median (earliest on ties). Deterministic for a fixed seed.
pub fn train(
    mut model: Model,
    train_set: &[PatchTensor],
    val_set: &[PatchTensor],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainedModel {
            model,
            history: Vec::new(),
            best_epoch: 0,
        });
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, &model);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = stream_rng(config.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&model, train_set, batch, config)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::DivergenceDetected {
                    epoch,
                    last_good: Box::new(model),
                });
            }
            let previous = model.clone();
            opt.apply(&mut model, &grads);
            if model.params().iter().any(|p| !p.all_finite()) {
                return Err(Error::DivergenceDetected {
                    epoch,
                    last_good: Box::new(previous),
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        let stats = aggregate(&validation_errors(&model, val_set)?)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_median_deg: stats.median,
            val_mean_deg: stats.mean,
        });
        if best.as_ref().is_none_or(|b| stats.median < b.0) {
            best = Some((stats.median, epoch, model.clone()));
        }
        let best_epoch = best.as_ref().unwrap().1;
        if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
    })
}

/// Index of the error set with the smallest median; earliest wins ties.
pub fn select_best_by_errors(error_sets: &[Vec<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, errs) in error_sets.iter().enumerate() {
        let median = aggregate(errs)?.median;
        if best.is_none_or(|(_, m)| median < m) {
            best = Some((i, median));
        }
    }
    best.map(|b| b.0).ok_or(Error::EmptyCandidates)
}

/// Picks the candidate with the lowest head-0 validation median.
pub fn select_best(candidates: Vec<TrainedModel>, val_set: &[PatchTensor]) -> Result<(usize, TrainedModel)> {
    let errors = candidates
        .iter()
        .map(|c| validation_errors(&c.model, val_set))
        .collect::<Result<Vec<_>>>()?;
    let i = select_best_by_errors(&errors)?;
    Ok((i, candidates.into_iter().nth(i).unwrap()))
}

pub fn write_history_csv(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_median_deg", "val_mean_deg"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_median_deg.to_string(),
            r.val_mean_deg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<history>", e))
}
