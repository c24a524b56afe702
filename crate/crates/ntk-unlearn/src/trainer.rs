//! Masked SGD fine-tuning, the gradient-based unlearning baselines (retrain,
//! max-loss ascent, random relabeling), the relearning-epochs metric, and
//! linear probing.
//!
//! Every operation touches only the parameters selected by the config's mask,
//! and every stochastic choice (shuffles, relabels) is derived from the config
//! seed, so runs are bitwise reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{select_params, MaskStrategy, Model, ParamMask};
use crate::numerics::DenseMatrix;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    MseOnehot,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

/// Settings for one training run. The mask bounds what any operation may
/// modify; everything outside it is untouchable.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask: ParamMask,
}

impl TrainConfig {
    pub fn new(mask: ParamMask) -> Self {
        TrainConfig {
            loss: Loss::MseOnehot,
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Epochs needed to push the forget loss under the threshold, or Overflow
/// when the cap was exhausted first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelearnEpochs {
    Count(usize),
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelearnResult {
    pub epochs: RelearnEpochs,
    pub final_loss: f64,
    pub threshold: f64,
    pub cap: usize,
}

impl RelearnResult {
    /// Report rendering: a plain count, or ">cap" on overflow.
    pub fn epochs_label(&self) -> String {
        match self.epochs {
            RelearnEpochs::Count(k) => k.to_string(),
            RelearnEpochs::Overflow => format!(">{}", self.cap),
        }
    }
}

/// One emitted training-history line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub retain_acc: f64,
    pub forget_acc: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,loss,retain_acc,forget_acc\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.retain_acc, r.forget_acc));
    }
    out
}

fn check_labels(labels: &[usize], num_classes: usize, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "training labels".into(),
            expected: format!("{n}"),
            got: format!("{}", labels.len()),
        });
    }
    for &y in labels {
        if y >= num_classes {
            return Err(Error::LabelRange {
                label: y,
                num_classes,
            });
        }
    }
    Ok(())
}

fn per_sample_loss(loss: Loss, logits: &[f64], label: usize) -> f64 {
    match loss {
        Loss::MseOnehot => {
            let mut s = 0.0;
            for (c, f) in logits.iter().enumerate() {
                let y = if c == label { 1.0 } else { 0.0 };
                s += (f - y) * (f - y);
            }
            s
        }
        Loss::CrossEntropy => {
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            lse - logits[label]
        }
    }
}

/// Mean per-sample loss over the whole set (0 for an empty set).
pub fn mean_loss(model: &Model, inputs: &DenseMatrix, labels: &[usize], loss: Loss) -> Result<f64> {
    check_labels(labels, model.spec.num_classes, inputs.rows())?;
    if inputs.rows() == 0 {
        return Ok(0.0);
    }
    let logits = model.forward(inputs)?;
    mean_loss_from_logits(&logits, labels, loss)
}

/// Mean per-sample loss from precomputed logits (one row per sample).
fn mean_loss_from_logits(logits: &DenseMatrix, labels: &[usize], loss: Loss) -> Result<f64> {
    let n = logits.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in 0..n {
        total += per_sample_loss(loss, logits.row(s), labels[s]);
    }
    let value = total / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    Ok(value)
}

/// dL/d(logits) of one sample's contribution to the batch-mean loss; the
/// 1/n factor is folded in via `inv_n`.
fn cotangent_row(loss: Loss, row: &[f64], label: usize, inv_n: f64, out: &mut [f64]) {
    match loss {
        Loss::MseOnehot => {
            for cl in 0..row.len() {
                let y = if cl == label { 1.0 } else { 0.0 };
                out[cl] = 2.0 * inv_n * (row[cl] - y);
            }
        }
        Loss::CrossEntropy => {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for cl in 0..row.len() {
                let p = (row[cl] - max).exp() / z;
                let y = if cl == label { 1.0 } else { 0.0 };
                out[cl] = inv_n * (p - y);
            }
        }
    }
}

/// dL/d(logits) for the batch-mean loss; the 1/n factor is folded in so the
/// accumulated parameter gradient is exactly ∇ of the mean loss.
#[cfg(test)]
fn loss_cotangents(loss: Loss, logits: &DenseMatrix, labels: &[usize]) -> DenseMatrix {
    let n = logits.rows();
    let c = logits.cols();
    let inv_n = 1.0 / n as f64;
    let mut cot = DenseMatrix::zeros(n, c);
    for s in 0..n {
        let row = cot.row_mut(s);
        cotangent_row(loss, logits.row(s), labels[s], inv_n, row);
    }
    cot
}

/// Per-epoch sample order: a seeded Fisher-Yates shuffle keyed by epoch, so
/// batch composition is independent of platform and thread count.
fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, &format!("shuffle_epoch_{epoch}"));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn gather(inputs: &DenseMatrix, labels: &[usize], chunk: &[usize]) -> (DenseMatrix, Vec<usize>) {
    let mut bx = DenseMatrix::zeros(chunk.len(), inputs.cols());
    let mut by = Vec::with_capacity(chunk.len());
    for (bi, &s) in chunk.iter().enumerate() {
        bx.row_mut(bi).copy_from_slice(inputs.row(s));
        by.push(labels[s]);
    }
    (bx, by)
}

/// Minibatch SGD over the masked parameters. `ascend` flips the sign for
/// gradient-ascent baselines. `after_epoch` sees (1-based epoch, post-epoch
/// mean loss over the full set, current model, post-epoch logits over the
/// full set) and returns true to stop.
fn run_training(
    model: &Model,
    inputs: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
    ascend: bool,
    mut after_epoch: impl FnMut(usize, f64, &Model, &DenseMatrix) -> Result<bool>,
) -> Result<(Model, Vec<f64>)> {
    config.validate()?;
    check_labels(labels, model.spec.num_classes, inputs.rows())?;
    let d = model.params.len();
    if config.mask.indices().last().is_some_and(|&i| i >= d) {
        return Err(Error::DimensionMismatch {
            context: "training mask".into(),
            expected: format!("indices < {d}"),
            got: format!("max index {}", config.mask.indices().last().unwrap()),
        });
    }
    let mut current = model.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut velocity = vec![0.0; config.mask.len()];
    let n = inputs.rows();
    let sign = if ascend { -1.0 } else { 1.0 };
    let mut grad = vec![0.0; d];
    let mut cot = vec![0.0; model.spec.num_classes];
    for epoch in 0..config.epochs {
        let order = shuffled_indices(n, config.seed, epoch);
        for chunk in order.chunks(config.batch_size) {
            let (bx, by) = gather(inputs, labels, chunk);
            current.check_inputs(&bx)?;
            grad.fill(0.0);
            let inv_n = 1.0 / bx.rows() as f64;
            for s in 0..bx.rows() {
                let (logits, cache) = current.forward_single_cached(bx.row(s))?;
                cotangent_row(config.loss, &logits, by[s], inv_n, &mut cot);
                current.backward_single(&cache, &cot, &mut grad);
            }
            let values = current.params.values_mut();
            match config.optimizer {
                Optimizer::Sgd => {
                    for &idx in config.mask.indices() {
                        values[idx] -= config.learning_rate * sign * grad[idx];
                    }
                }
                Optimizer::SgdMomentum => {
                    for (k, &idx) in config.mask.indices().iter().enumerate() {
                        velocity[k] = config.momentum * velocity[k] + sign * grad[idx];
                        values[idx] -= config.learning_rate * velocity[k];
                    }
                }
            }
        }
        let logits = current.forward(inputs)?;
        let loss = mean_loss_from_logits(&logits, labels, config.loss)?;
        history.push(loss);
        if after_epoch(epoch + 1, loss, &current, &logits)? {
            break;
        }
    }
    Ok((current, history))
}

/// Fine-tunes over the masked parameters; returns the trained model and the
/// per-epoch mean training loss.
pub fn finetune(
    model: &Model,
    inputs: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    run_training(model, inputs, labels, config, false, |_, _, _, _| Ok(false))
}

/// Fine-tune with a per-epoch observer (for history CSVs with accuracies).
/// The observer sees the post-epoch logits over the training set, so callers
/// can derive accuracies without another forward pass.
pub fn finetune_monitored(
    model: &Model,
    inputs: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &Model, &DenseMatrix) -> Result<()>,
) -> Result<(Model, Vec<f64>)> {
    run_training(model, inputs, labels, config, false, |epoch, loss, m, logits| {
        on_epoch(epoch, loss, m, logits)?;
        Ok(false)
    })
}

/// The golden baseline: training from the initialization on the retain set
/// only. Identical machinery to `finetune`; the distinction is what data and
/// starting point the caller hands over.
pub fn retrain(
    model_init: &Model,
    retain_inputs: &DenseMatrix,
    retain_labels: &[usize],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    finetune(model_init, retain_inputs, retain_labels, config)
}

/// Fraction of samples whose argmax logit equals the label; ties break
/// toward the lowest class index.
pub fn model_accuracy(model: &Model, inputs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, model.spec.num_classes, inputs.rows())?;
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::EmptySplit {
            filter: "accuracy over zero samples".into(),
        });
    }
    let logits = model.forward(inputs)?;
    let all_rows: Vec<usize> = (0..n).collect();
    logits_accuracy(&logits, labels, &all_rows).ok_or_else(|| Error::EmptySplit {
        filter: "accuracy over zero samples".into(),
    })
}

/// Fraction of the selected logit rows whose argmax equals the label; ties
/// break toward the lowest class index. `None` when `rows` is empty.
pub fn logits_accuracy(logits: &DenseMatrix, labels: &[usize], rows: &[usize]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    for &s in rows {
        let row = logits.row(s);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == labels[s] {
            hits += 1;
        }
    }
    Some(hits as f64 / rows.len() as f64)
}

/// Gradient ascent on the forget-set loss; stops when forget accuracy hits
/// zero or the epoch budget runs out.
pub fn max_loss_unlearn(
    model: &Model,
    forget_inputs: &DenseMatrix,
    forget_labels: &[usize],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    if forget_inputs.rows() == 0 || model_accuracy(model, forget_inputs, forget_labels)? == 0.0 {
        return Ok((model.clone(), Vec::new()));
    }
    let all_rows: Vec<usize> = (0..forget_inputs.rows()).collect();
    run_training(model, forget_inputs, forget_labels, config, true, |_, _, _, logits| {
        Ok(logits_accuracy(logits, forget_labels, &all_rows) == Some(0.0))
    })
}

/// The seeded uniform relabeling used by `random_label_unlearn`. Draws may
/// repeat the true label; the distribution is uniform over all classes.
pub fn random_relabel(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, "random_labels");
    (0..n).map(|_| rng.gen_range(0..num_classes)).collect()
}

/// Assigns fresh uniform labels to the forget set, then minimizes loss on the
/// relabeled samples over the masked parameters.
pub fn random_label_unlearn(
    model: &Model,
    forget_inputs: &DenseMatrix,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "random relabeling needs num_classes >= 2, got {num_classes}"
        )));
    }
    if num_classes != model.spec.num_classes {
        return Err(Error::InvalidConfig(format!(
            "relabel class count {num_classes} does not match the model's {}",
            model.spec.num_classes
        )));
    }
    let labels = random_relabel(forget_inputs.rows(), num_classes, config.seed);
    run_training(model, forget_inputs, &labels, config, false, |_, _, _, _| Ok(false))
}

/// Trains on the forget set until its mean loss drops under `threshold`,
/// giving up after `cap` epochs. The count is 1-based; 0 means the model was
/// already under the threshold.
pub fn relearn_epochs(
    model: &Model,
    forget_inputs: &DenseMatrix,
    forget_labels: &[usize],
    config: &TrainConfig,
    threshold: f64,
    cap: usize,
) -> Result<RelearnResult> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "relearn threshold must be > 0, got {threshold}"
        )));
    }
    if cap == 0 {
        return Err(Error::InvalidConfig("relearn cap must be >= 1".into()));
    }
    let initial = mean_loss(model, forget_inputs, forget_labels, config.loss)?;
    if initial < threshold {
        return Ok(RelearnResult {
            epochs: RelearnEpochs::Count(0),
            final_loss: initial,
            threshold,
            cap,
        });
    }
    let mut budget = config.clone();
    budget.epochs = cap;
    let mut reached: Option<(usize, f64)> = None;
    let (_, history) = run_training(
        model,
        forget_inputs,
        forget_labels,
        &budget,
        false,
        |epoch, loss, _, _| {
            if loss < threshold {
                reached = Some((epoch, loss));
                return Ok(true);
            }
            Ok(false)
        },
    )?;
    Ok(match reached {
        Some((epoch, loss)) => RelearnResult {
            epochs: RelearnEpochs::Count(epoch),
            final_loss: loss,
            threshold,
            cap,
        },
        None => RelearnResult {
            epochs: RelearnEpochs::Overflow,
            final_loss: history.last().copied().unwrap_or(initial),
            threshold,
            cap,
        },
    })
}

/// Head-only fine-tuning with the rest of the network frozen.
pub fn linear_probe(
    model: &Model,
    inputs: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    let mut probe = config.clone();
    probe.mask = select_params(&model.spec, &MaskStrategy::HeadOnly)?;
    finetune(model, inputs, labels, &probe)
}
