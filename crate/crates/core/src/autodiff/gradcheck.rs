//! Central finite-difference check of tape gradients.
//!
//! Coordinates where a perturbation of ±ε flips a ReLU's active set or a
//! max-pool's argmax are non-differentiable points; they are reported as
//! excluded instead of being compared.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{forward, ForwardPass, GradTarget, Mode, OpKind, Reduction, Saved};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Scalar objective differentiated by the check.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Softmax cross-entropy (mean over the batch) against labels.
    CrossEntropy(Vec<usize>),
    /// Sum of all output elements.
    OutputSum,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Include input coordinates in the sampled pool.
    pub check_input: bool,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, samples: 30, seed: 0, mode: Mode::Train, check_input: false, floor: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coordinate {
    /// Parameter name, or `input`.
    pub target: String,
    pub index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateError {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative: f64,
    pub mean_relative: f64,
    pub checked: usize,
    /// Worst coordinates, largest error first.
    pub worst: Vec<CoordinateError>,
    /// Coordinates skipped because ±ε crosses a kink.
    pub excluded: Vec<Coordinate>,
}

/// Compare analytic gradients against central differences on `samples`
/// randomly chosen coordinates. Deterministic given `cfg.seed`.
pub fn finite_difference_check(
    model: &ModelGraph,
    input: &Tensor,
    objective: &Objective,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.epsilon <= 0.0 {
        return Err(Error::Config("finite-difference epsilon must be positive".into()));
    }
    let mut targets = vec![GradTarget::Parameters];
    if cfg.check_input {
        targets.push(GradTarget::Input);
    }
    let (_, grads) = evaluate(model, input, objective, cfg.mode, &targets)?;

    // Flat coordinate pool: parameters in model order, then input.
    let mut pool: Vec<(String, usize)> = model.parameters().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    if cfg.check_input {
        pool.push(("input".into(), input.len()));
    }
    let total: usize = pool.iter().map(|(_, n)| n).sum();
    let take = cfg.samples.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flat: Vec<usize> = if take == 0 { Vec::new() } else { sample(&mut rng, total, take).into_vec() };
    flat.sort_unstable();
    let coords: Vec<Coordinate> = flat
        .into_iter()
        .map(|mut k| {
            for (name, n) in &pool {
                if k < *n {
                    return Coordinate { target: name.clone(), index: k };
                }
                k -= n;
            }
            unreachable!()
        })
        .collect();

    let results = par::map_slice(&coords, |c| -> Result<Option<CoordinateError>> {
        let analytic = if c.target == "input" {
            grads.input.as_ref().unwrap().data()[c.index] as f64
        } else {
            grads.params[&c.target].data()[c.index] as f64
        };
        let (plus, plus_kinks, h_plus) = perturbed(model, input, objective, cfg.mode, c, cfg.epsilon)?;
        let (minus, minus_kinks, h_minus) = perturbed(model, input, objective, cfg.mode, c, -cfg.epsilon)?;
        if plus_kinks != minus_kinks {
            return Ok(None);
        }
        let numeric = (plus - minus) / (h_plus - h_minus);
        let relative = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        Ok(Some(CoordinateError { coordinate: c.clone(), analytic, numeric, relative }))
    });

    let mut checked = Vec::new();
    let mut excluded = Vec::new();
    for (c, r) in coords.iter().zip(results) {
        match r? {
            Some(e) => checked.push(e),
            None => excluded.push(c.clone()),
        }
    }
    let max_relative = checked.iter().map(|e| e.relative).fold(0.0, f64::max);
    let mean_relative =
        if checked.is_empty() { 0.0 } else { checked.iter().map(|e| e.relative).sum::<f64>() / checked.len() as f64 };
    let n_checked = checked.len();
    checked.sort_by(|a, b| b.relative.total_cmp(&a.relative));
    checked.truncate(5);
    Ok(GradCheckReport { max_relative, mean_relative, checked: n_checked, worst: checked, excluded })
}

fn evaluate(
    model: &ModelGraph,
    input: &Tensor,
    objective: &Objective,
    mode: Mode,
    targets: &[GradTarget],
) -> Result<(f64, super::Gradients)> {
    let mut pass = forward(model, input, mode)?;
    match objective {
        Objective::CrossEntropy(labels) => {
            let (node, loss) = pass.attach_loss(labels, Reduction::Mean)?;
            Ok((loss, pass.backward(node, targets)?))
        }
        Objective::OutputSum => {
            let out = pass.output();
            let seed = Tensor::full(out.shape(), 1.0);
            let value = out.sum();
            Ok((value, pass.backward_from(pass.output_node(), seed, targets)?))
        }
    }
}

fn objective_value(pass: &mut ForwardPass<'_>, objective: &Objective) -> Result<f64> {
    match objective {
        Objective::CrossEntropy(labels) => Ok(pass.attach_loss(labels, Reduction::Mean)?.1),
        Objective::OutputSum => Ok(pass.output().sum()),
    }
}

/// Objective after shifting one coordinate, the kink signature of the pass
/// and the exact stored value of the perturbed coordinate.
fn perturbed(
    model: &ModelGraph,
    input: &Tensor,
    objective: &Objective,
    mode: Mode,
    c: &Coordinate,
    delta: f64,
) -> Result<(f64, Vec<Vec<u32>>, f64)> {
    if c.target == "input" {
        let mut x = input.clone();
        let v = &mut x.data_mut()[c.index];
        *v = (*v as f64 + delta) as Scalar;
        let stored = *v as f64;
        let mut pass = forward(model, &x, mode)?;
        let sig = kink_signature(&pass);
        Ok((objective_value(&mut pass, objective)?, sig, stored))
    } else {
        let mut m = model.clone();
        let stored = {
            let mut state = m.state_mut();
            let t = state.get_mut(&c.target).ok_or_else(|| Error::UnknownLayer(c.target.clone()))?;
            let v = &mut t.data_mut()[c.index];
            *v = (*v as f64 + delta) as Scalar;
            *v as f64
        };
        let mut pass = forward(&m, input, mode)?;
        let sig = kink_signature(&pass);
        Ok((objective_value(&mut pass, objective)?, sig, stored))
    }
}

/// ReLU active sets and max-pool argmaxes of a pass.
pub fn kink_signature(pass: &ForwardPass<'_>) -> Vec<Vec<u32>> {
    pass.nodes()
        .iter()
        .filter_map(|n| match (&n.op, &n.saved) {
            (OpKind::Relu, _) => Some(n.value.data().iter().map(|&v| (v > 0.0) as u32).collect()),
            (OpKind::MaxPool2d, Saved::PoolArgmax(a)) => Some(a.clone()),
            _ => None,
        })
        .collect()
}
