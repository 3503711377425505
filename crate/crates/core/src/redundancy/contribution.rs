use serde::{Deserialize, Serialize};

use crate::am::{hook_layer, Hook};
use crate::autodiff::{forward, GradTarget, Mode, Reduction};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ModelGraph;

/// Norm tag for the contribution index: L2 over each filter's spatial map.
pub const L2_SPATIAL: &str = "l2-spatial";
/// Norm tag for Taylor scores: |mean(a·g)| over images and positions.
pub const TAYLOR_ABS_MEAN: &str = "abs-mean-activation-gradient";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionTable {
    pub layer: String,
    /// Layer whose output map is differentiated.
    pub hook: String,
    pub values: Vec<f64>,
    pub samples: usize,
    pub norm: String,
}

impl ContributionTable {
    /// Filter indices from lowest to highest value; ties to the lower index.
    pub fn ascending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(a.cmp(&b)));
        order
    }
}

/// Contribution index and Taylor score of one layer from the same pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStatistics {
    pub contribution: ContributionTable,
    pub taylor: ContributionTable,
}

/// Per-filter gradient statistics for several conv layers. Each image's
/// loss is its own cross-entropy (batch statistics frozen), so the result
/// does not depend on `batch`; sums run in dataset order.
pub fn gradient_statistics(
    model: &ModelGraph,
    data: &LabeledDataset,
    layers: &[String],
    hook: Hook,
    batch: usize,
) -> Result<Vec<LayerStatistics>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let hooks: Vec<String> = layers.iter().map(|l| hook_layer(model, l, hook)).collect::<Result<_>>()?;
    let channels: Vec<usize> = layers.iter().map(|l| model.conv(l).map(|c| c.out_channels)).collect::<Result<_>>()?;
    let mut norm_sum: Vec<Vec<f64>> = channels.iter().map(|&c| vec![0.0; c]).collect();
    let mut ag_sum: Vec<Vec<f64>> = norm_sum.clone();
    let mut spatial = vec![0usize; layers.len()];
    let targets: Vec<GradTarget> = hooks.iter().map(|h| GradTarget::Activation(h.clone())).collect();

    let mut start = 0;
    while start < data.len() {
        let end = (start + batch).min(data.len());
        let (x, y) = data.range(start, end);
        let mut pass = forward(model, &x, Mode::Eval)?;
        let (loss, _) = pass.attach_loss(&y, Reduction::Sum)?;
        let grads = pass.backward(loss, &targets)?;
        for (li, h) in hooks.iter().enumerate() {
            let a = pass.activation(h)?;
            let g = &grads.activations[h];
            let [n, c, hh, ww] = g.dims4();
            let hw = hh * ww;
            spatial[li] = hw;
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    let gp = &g.data()[off..off + hw];
                    let ap = &a.data()[off..off + hw];
                    let mut sq = 0.0f64;
                    let mut ag = 0.0f64;
                    for (&gv, &av) in gp.iter().zip(ap) {
                        sq += gv as f64 * gv as f64;
                        ag += av as f64 * gv as f64;
                    }
                    norm_sum[li][ch] += sq.sqrt();
                    ag_sum[li][ch] += ag;
                }
            }
        }
        start = end;
    }

    let n = data.len() as f64;
    Ok(layers
        .iter()
        .enumerate()
        .map(|(li, layer)| LayerStatistics {
            contribution: ContributionTable {
                layer: layer.clone(),
                hook: hooks[li].clone(),
                values: norm_sum[li].iter().map(|v| v / n).collect(),
                samples: data.len(),
                norm: L2_SPATIAL.into(),
            },
            taylor: ContributionTable {
                layer: layer.clone(),
                hook: hooks[li].clone(),
                values: ag_sum[li].iter().map(|v| (v / (n * spatial[li] as f64)).abs()).collect(),
                samples: data.len(),
                norm: TAYLOR_ABS_MEAN.into(),
            },
        })
        .collect())
}

/// Mean over images of each filter's L2 gradient norm, for every layer in
/// `layers`.
pub fn contribution_indices(model: &ModelGraph, data: &LabeledDataset, layers: &[String], batch: usize) -> Result<Vec<ContributionTable>> {
    Ok(gradient_statistics(model, data, layers, Hook::PostActivation, batch)?
        .into_iter()
        .map(|s| s.contribution)
        .collect())
}

pub fn contribution_index(model: &ModelGraph, data: &LabeledDataset, layer: &str) -> Result<ContributionTable> {
    Ok(contribution_indices(model, data, &[layer.to_string()], 32)?.remove(0))
}
