use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward, softmax_cross_entropy, GradTarget, Mode, Reduction, BN_MOMENTUM};
use crate::data::{augment, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr · gamma^(epoch / every)`
    Step { lr: f64, gamma: f64, every: usize },
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Step { lr, gamma, every } => lr * gamma.powi((epoch / every.max(1)) as i32),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } | LrSchedule::Step { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random horizontal flip and padded crop per image.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            lr: LrSchedule::Constant { lr: 0.01 },
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning recipe: constant learning rate 0.001 for a quarter of the
    /// original epochs (at least one).
    pub fn finetune_from(base: &TrainConfig) -> TrainConfig {
        TrainConfig { epochs: (base.epochs / 4).max(1), lr: LrSchedule::Constant { lr: 0.001 }, ..base.clone() }
    }

    /// `epochs == 0` is accepted here so callers can express "no training";
    /// `train` itself then returns an empty curve.
    pub fn validate(&self) -> Result<()> {
        let lr = self.lr.base();
        let ok = self.batch_size >= 1
            && lr >= 0.0
            && lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && match self.lr {
                LrSchedule::Step { gamma, every, .. } => gamma > 0.0 && every >= 1,
                LrSchedule::Constant { .. } => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub accuracy: f64,
}

pub type TrainCurve = Vec<EpochStats>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// SGD with momentum and L2 weight decay on conv/dense weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd {
    pub velocity: BTreeMap<String, Tensor>,
    pub iteration: usize,
}

impl Sgd {
    fn step(&mut self, model: &mut ModelGraph, grads: &BTreeMap<String, Tensor>, lr: f64, cfg: &TrainConfig) {
        for (name, param) in model.parameters_mut() {
            let g = &grads[&name];
            let decay = if name.ends_with(".weight") { cfg.weight_decay } else { 0.0 };
            let v = self.velocity.entry(name).or_insert_with(|| Tensor::zeros(param.shape()));
            for ((w, vel), &gv) in param.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let d = gv as f64 + decay * *w as f64;
                let nv = cfg.momentum * *vel as f64 + d;
                *vel = nv as Scalar;
                *w = (*w as f64 - lr * nv) as Scalar;
            }
        }
        self.iteration += 1;
    }
}

pub fn train(model: &mut ModelGraph, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainCurve> {
    let mut opt = Sgd::default();
    train_with(model, data, cfg, &mut opt, |_, _| Ok(()))
}

/// Train with an explicit optimizer state, calling `hook(iteration, model)`
/// after every update (iterations count from 1).
pub fn train_with(
    model: &mut ModelGraph,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    opt: &mut Sgd,
    mut hook: impl FnMut(usize, &ModelGraph) -> Result<()>,
) -> Result<TrainCurve> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at_epoch(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, y) = data.batch(idx);
            if cfg.augment {
                x = augment(&x, cfg.seed ^ ((epoch as u64) << 32) ^ bi as u64);
            }
            let (grads, loss, hits, bn) = {
                let mut pass = forward(model, &x, Mode::Train)?;
                let hits = count_correct(pass.output(), &y);
                let (node, loss) = pass.attach_loss(&y, Reduction::Mean)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, iteration: opt.iteration, norms: layer_norms(model) });
                }
                let g = pass.backward(node, &[GradTarget::Parameters])?;
                (g.params, loss, hits, std::mem::take(&mut pass.bn_updates))
            };
            opt.step(model, &grads, lr, cfg);
            for u in bn {
                if let Layer::BatchNorm(b) = &mut model.layers[u.layer].layer {
                    for c in 0..b.channels {
                        let rm = &mut b.running_mean.data_mut()[c];
                        *rm = (BN_MOMENTUM * *rm as f64 + (1.0 - BN_MOMENTUM) * u.mean[c]) as Scalar;
                        let rv = &mut b.running_var.data_mut()[c];
                        *rv = (BN_MOMENTUM * *rv as f64 + (1.0 - BN_MOMENTUM) * u.var_unbiased[c]) as Scalar;
                    }
                }
            }
            loss_sum += loss;
            batches += 1;
            correct += hits;
            hook(opt.iteration, model)?;
        }
        curve.push(EpochStats { epoch: epoch + 1, loss: loss_sum / batches as f64, accuracy: correct as f64 / data.len() as f64 });
    }
    Ok(curve)
}

fn layer_norms(model: &ModelGraph) -> String {
    model
        .parameters()
        .iter()
        .map(|(n, t)| format!("{n}={:.4e}", t.l2_norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Predicted class per row; ties go to the lowest class index.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.batch())
        .map(|i| {
            let row = logits.item(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    predictions(logits).iter().zip(labels).filter(|(p, l)| p == l).count()
}

pub const EVAL_BATCH: usize = 256;

pub fn evaluate(model: &ModelGraph, data: &LabeledDataset) -> Result<Evaluation> {
    evaluate_batched(model, data, EVAL_BATCH)
}

pub fn evaluate_batched(model: &ModelGraph, data: &LabeledDataset, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch.max(1)).min(data.len());
        let (x, y) = data.range(start, end);
        let pass = forward(model, &x, Mode::Eval)?;
        correct += count_correct(pass.output(), &y);
        for l in softmax_cross_entropy(pass.output(), &y).1 {
            loss += l;
        }
        start = end;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss / data.len() as f64,
        correct,
        total: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn toy_data(n: usize, seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = Tensor::from_fn(&[n, 1, 28, 28], |_| rng.random::<f32>() as Scalar);
        let labels = (0..n).map(|i| i % 10).collect();
        LabeledDataset::new(images, labels, 10, "toy").unwrap()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = toy_data(16, 1);
        let mut m = build_model("convnet-desk", 3).unwrap();
        let before = m.clone();
        let cfg = TrainConfig { epochs: 1, batch_size: 8, lr: LrSchedule::Constant { lr: 0.0 }, ..Default::default() };
        train(&mut m, &data, &cfg).unwrap();
        for ((_, a), (_, b)) in m.parameters().iter().zip(before.parameters().iter()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = toy_data(4, 1).head(0);
        let m = build_model("convnet-desk", 3).unwrap();
        assert!(matches!(evaluate(&m, &data), Err(Error::EmptyDataset)));
    }

    #[test]
    fn constant_logits_pick_lowest_class() {
        let mut m = build_model("convnet-desk", 3).unwrap();
        for (name, t) in m.parameters_mut() {
            if name.starts_with("fc.") {
                t.data_mut().fill(0.0);
            }
        }
        let data = toy_data(30, 2);
        let e = evaluate(&m, &data).unwrap();
        // every prediction is class 0, which is 3 of the 30 labels
        assert_eq!(e.correct, 3);
        assert!((e.mean_loss - (10f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn evaluation_is_batch_independent() {
        let m = build_model("convnet-desk", 5).unwrap();
        let data = toy_data(20, 3);
        let a = evaluate_batched(&m, &data, 7).unwrap();
        let b = evaluate_batched(&m, &data, 1).unwrap();
        assert_eq!(a.correct, b.correct);
        assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step { lr: 0.1, gamma: 0.5, every: 2 };
        assert_eq!(s.at_epoch(0), 0.1);
        assert_eq!(s.at_epoch(3), 0.05);
        let f = TrainConfig::finetune_from(&TrainConfig { epochs: 5, ..Default::default() });
        assert_eq!(f.epochs, 1);
        assert_eq!(f.lr, LrSchedule::Constant { lr: 0.001 });
    }
}
