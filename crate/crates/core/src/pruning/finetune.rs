use serde::{Deserialize, Serialize};

use crate::am::{synthesize_pattern, AmConfig, FilterPattern};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::train::{train_with, Sgd};
use crate::model::{ModelGraph, TrainConfig, TrainCurve};
use crate::redundancy::pattern_distance;
use crate::tensor::Tensor;

/// Filter to watch during fine-tuning, by its index in the unpruned layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTarget {
    pub layer: String,
    pub filter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub targets: Vec<TraceTarget>,
    pub interval: usize,
    pub am: AmConfig,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { targets: Vec::new(), interval: 100, am: AmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub pattern: Tensor,
    /// Squared pixel distance to the pre-finetune pattern.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTrace {
    pub target: TraceTarget,
    /// Index of the filter in the model being fine-tuned.
    pub current: usize,
    pub initial: Tensor,
    pub points: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub model: ModelGraph,
    pub curve: TrainCurve,
    pub traces: Vec<TransitionTrace>,
}

fn resolve(model: &ModelGraph, t: &TraceTarget) -> Result<usize> {
    model
        .conv(&t.layer)?
        .filter_origin
        .iter()
        .position(|&o| o == t.filter)
        .ok_or_else(|| Error::TraceTargetPruned { layer: t.layer.clone(), filter: t.filter })
}

fn pattern(model: &ModelGraph, layer: &str, current: usize, am: &AmConfig) -> Result<FilterPattern> {
    let cfg = AmConfig { seed: am.seed ^ current as u64, ..am.clone() };
    synthesize_pattern(model, layer, current, &cfg)
}

/// Fine-tune `model` with SGD, re-synthesizing the patterns of the trace
/// targets every `trace.interval` iterations.
pub fn finetune(model: &ModelGraph, data: &LabeledDataset, cfg: &TrainConfig, trace: &TraceConfig) -> Result<FinetuneResult> {
    if trace.interval == 0 {
        return Err(Error::Config("trace interval must be positive".into()));
    }
    let current: Vec<usize> = trace.targets.iter().map(|t| resolve(model, t)).collect::<Result<_>>()?;
    cfg.validate()?;
    let mut traces = Vec::with_capacity(trace.targets.len());
    for (t, &c) in trace.targets.iter().zip(&current) {
        let initial = pattern(model, &t.layer, c, &trace.am)?;
        traces.push(TransitionTrace { target: t.clone(), current: c, initial: initial.pattern, points: Vec::new() });
    }
    let mut tuned = model.clone();
    if cfg.epochs == 0 {
        return Ok(FinetuneResult { model: tuned, curve: Vec::new(), traces });
    }
    let mut opt = Sgd::default();
    let curve = train_with(&mut tuned, data, cfg, &mut opt, |iteration, m| {
        if iteration % trace.interval != 0 {
            return Ok(());
        }
        for tr in traces.iter_mut() {
            let p = pattern(m, &tr.target.layer, tr.current, &trace.am)?;
            let initial = FilterPattern { pattern: tr.initial.clone(), ..p.clone() };
            let distance = pattern_distance(&p, &initial)?;
            tr.points.push(TracePoint { iteration, pattern: p.pattern, distance });
        }
        Ok(())
    })?;
    Ok(FinetuneResult { model: tuned, curve, traces })
}
