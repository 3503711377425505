//! Activation-maximization synthesis of filter patterns.
//!
//! Starting from seeded noise around mid-gray, the input image is moved
//! along the gradient of the filter's activation (with optional L2 decay)
//! and clamped to the valid image range after every step. The resulting
//! image is the filter's functionality pattern.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_with, ForwardOptions, GradTarget, Mode};
use crate::error::{Error, Result};
use crate::io::config_hash;
use crate::model::{Layer, ModelGraph};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Spatial reduction of the filter's feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Mean,
    Max,
}

/// Which output of the conv layer is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hook {
    /// Output of the ReLU following the conv (through its batchnorm).
    PostActivation,
    /// Raw conv output.
    PreActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmConfig {
    pub step_size: f64,
    pub steps: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub objective: Reduce,
    pub hook: Hook,
    pub l2_decay: f64,
    /// Clamp the image to [0, 1] after each step.
    pub clamp: bool,
    /// Step-size halvings allowed when the objective drops early on.
    pub max_halvings: usize,
    /// Number of leading steps over which the objective must not decrease.
    pub ascent_window: usize,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            steps: 200,
            init_scale: 0.1,
            seed: 0,
            objective: Reduce::Mean,
            hook: Hook::PostActivation,
            l2_decay: 1e-4,
            clamp: true,
            max_halvings: 6,
            ascent_window: 10,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.steps == 0 || self.init_scale < 0.0 || self.l2_decay < 0.0 {
            return Err(Error::Config(format!("invalid AM configuration {self:?}")));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterPattern {
    pub layer: String,
    pub filter: usize,
    /// (C, H, W), same as the model input.
    pub pattern: Tensor,
    /// Objective at the final image.
    pub activation: f64,
    /// Objective at the initial noise image.
    pub initial_activation: f64,
    pub steps: usize,
    /// Step size of the accepted run (after any halvings).
    pub step_size: f64,
    /// The gradient stayed zero for every step.
    pub dead: bool,
    pub config_hash: String,
}

/// Manifest entry describing a pattern without its pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub layer: String,
    pub filter: usize,
    pub activation: f64,
    pub initial_activation: f64,
    pub steps: usize,
    pub step_size: f64,
    pub dead: bool,
    pub config_hash: String,
}

impl FilterPattern {
    pub fn summary(&self) -> PatternSummary {
        PatternSummary {
            layer: self.layer.clone(),
            filter: self.filter,
            activation: self.activation,
            initial_activation: self.initial_activation,
            steps: self.steps,
            step_size: self.step_size,
            dead: self.dead,
            config_hash: self.config_hash.clone(),
        }
    }
}

/// Name of the layer whose output is maximized for conv `layer`.
pub fn hook_layer(model: &ModelGraph, layer: &str, hook: Hook) -> Result<String> {
    let idx = model.index_of(layer)?;
    if !matches!(model.layers[idx].layer, Layer::Conv2d(_)) {
        return Err(Error::Config(format!("`{layer}` is not a conv layer")));
    }
    if hook == Hook::PreActivation {
        return Ok(layer.to_string());
    }
    for spec in &model.layers[idx + 1..] {
        match spec.layer {
            Layer::BatchNorm(_) => continue,
            Layer::Relu => return Ok(spec.name.clone()),
            _ => break,
        }
    }
    Ok(layer.to_string())
}

/// Initial image: N(0.5, σ²) noise clamped to [0, 1].
pub fn initial_image(shape: [usize; 3], scale: f64, seed: u64) -> Tensor {
    let dims = [1, shape[0], shape[1], shape[2]];
    if scale == 0.0 {
        return Tensor::full(&dims, 0.5);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.5, scale).expect("finite scale");
    Tensor::from_fn(&dims, |_| normal.sample(&mut rng).clamp(0.0, 1.0) as Scalar)
}

/// Objective value and its gradient w.r.t. the input image.
pub fn objective_and_gradient(
    model: &ModelGraph,
    hook_layer: &str,
    filter: usize,
    reduce: Reduce,
    x: &Tensor,
) -> Result<(f64, Tensor)> {
    let opts = ForwardOptions { stop_after: Some(hook_layer), ..Default::default() };
    let pass = forward_with(model, x, Mode::Eval, &opts)?;
    let out = pass.output();
    let [_, ch, h, w] = out.dims4();
    if filter >= ch {
        return Err(Error::Config(format!("filter {filter} out of range for `{hook_layer}` with {ch} channels")));
    }
    let plane = &out.data()[filter * h * w..(filter + 1) * h * w];
    let mut seed = Tensor::zeros(out.shape());
    let value = match reduce {
        Reduce::Mean => {
            let hw = (h * w) as Scalar;
            seed.data_mut()[filter * h * w..(filter + 1) * h * w].fill(1.0 / hw);
            plane.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64
        }
        Reduce::Max => {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            seed.data_mut()[filter * h * w + best] = 1.0;
            plane[best] as f64
        }
    };
    let grads = pass.backward_from(pass.output_node(), seed, &[GradTarget::Input])?;
    Ok((value, grads.input.expect("input gradient requested")))
}

struct Run {
    image: Tensor,
    trajectory: Vec<f64>,
    dead: bool,
}

fn ascend(model: &ModelGraph, hook: &str, filter: usize, cfg: &AmConfig, step: f64) -> Result<Run> {
    let mut x = initial_image(model.input_shape, cfg.init_scale, cfg.seed);
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut zero_steps = 0usize;
    for _ in 0..cfg.steps {
        let (value, grad) = objective_and_gradient(model, hook, filter, cfg.objective, &x)?;
        trajectory.push(value);
        if grad.data().iter().all(|&g| g == 0.0) {
            zero_steps += 1;
        } else {
            zero_steps = 0;
        }
        for (xv, &g) in x.data_mut().iter_mut().zip(grad.data()) {
            let v = *xv as f64;
            let mut nv = v + step * g as f64 - step * cfg.l2_decay * v;
            if cfg.clamp {
                nv = nv.clamp(0.0, 1.0);
            }
            *xv = nv as Scalar;
        }
    }
    let (final_value, _) = objective_and_gradient(model, hook, filter, cfg.objective, &x)?;
    trajectory.push(final_value);
    Ok(Run { image: x, trajectory, dead: zero_steps >= cfg.steps })
}

/// First index in the leading window where the objective dropped.
fn first_decrease(trajectory: &[f64], window: usize) -> Option<usize> {
    let end = window.min(trajectory.len().saturating_sub(1));
    (0..end).find(|&t| {
        let (a, b) = (trajectory[t], trajectory[t + 1]);
        b < a - 1e-6 * a.abs().max(1e-3)
    })
}

/// Synthesize the pattern of `filter` in conv `layer`. Deterministic given
/// `cfg.seed`.
pub fn synthesize_pattern(model: &ModelGraph, layer: &str, filter: usize, cfg: &AmConfig) -> Result<FilterPattern> {
    cfg.validate()?;
    let conv = model.conv(layer)?;
    if filter >= conv.out_channels {
        return Err(Error::Config(format!("filter {filter} ≥ {} filters in `{layer}`", conv.out_channels)));
    }
    let hook = hook_layer(model, layer, cfg.hook)?;
    let mut step = cfg.step_size;
    let mut halvings = 0;
    loop {
        let run = ascend(model, &hook, filter, cfg, step)?;
        match first_decrease(&run.trajectory, cfg.ascent_window) {
            Some(t) if !run.dead => {
                if halvings == cfg.max_halvings {
                    return Err(Error::AscentFailure {
                        layer: layer.to_string(),
                        filter,
                        halvings,
                        detail: format!(
                            "step size {step:.3e}: objective {:.6e} -> {:.6e} at step {t}",
                            run.trajectory[t],
                            run.trajectory[t + 1]
                        ),
                    });
                }
                step /= 2.0;
                halvings += 1;
            }
            _ => {
                return Ok(FilterPattern {
                    layer: layer.to_string(),
                    filter,
                    activation: *run.trajectory.last().unwrap(),
                    initial_activation: run.trajectory[0],
                    pattern: run.image.reshape(model.input_shape.to_vec())?,
                    steps: cfg.steps,
                    step_size: step,
                    dead: run.dead,
                    config_hash: cfg.hash(),
                })
            }
        }
    }
}

/// Patterns for every filter of `layer`, in filter order. Filter `i` uses
/// seed `cfg.seed ^ i`.
pub fn visualize_layer(model: &ModelGraph, layer: &str, cfg: &AmConfig) -> Result<Vec<FilterPattern>> {
    visualize_filters(model, layer, &(0..model.conv(layer)?.out_channels).collect::<Vec<_>>(), cfg)
}

pub fn visualize_filters(model: &ModelGraph, layer: &str, filters: &[usize], cfg: &AmConfig) -> Result<Vec<FilterPattern>> {
    let hash = cfg.hash();
    par::map_slice(filters, |&i| {
        let per = AmConfig { seed: cfg.seed ^ i as u64, ..cfg.clone() };
        synthesize_pattern(model, layer, i, &per).map(|mut p| {
            p.config_hash = hash.clone();
            p
        })
    })
    .into_iter()
    .collect()
}
