use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClusterResult, ContributionTable};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, ModelGraph};
use crate::par;
use crate::pruning::{apply_plan, build_plan_functional, build_plan_l1, build_plan_ranked, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub ratio: f64,
    pub accuracy: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub layer: String,
    pub method: Method,
    pub points: Vec<SensitivityPoint>,
}

/// Precomputed rankings. Functional needs clusters and contribution
/// indices; Taylor needs Taylor scores; ℓ1 needs neither.
#[derive(Debug, Clone, Default)]
pub struct SensitivityInputs {
    pub clusters: Vec<ClusterResult>,
    pub scores: Vec<ContributionTable>,
}

/// Prune each prunable conv alone at every ratio (no fine-tuning) and
/// record the accuracy on `data`.
pub fn layer_sensitivity(
    model: &ModelGraph,
    data: &LabeledDataset,
    ratios: &[f64],
    method: Method,
    inputs: &SensitivityInputs,
) -> Result<Vec<SensitivityCurve>> {
    if ratios.is_empty() || ratios.windows(2).any(|w| w[0] >= w[1]) || ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::Config(format!("sensitivity ratios must be strictly increasing in [0, 1), got {ratios:?}")));
    }
    let layers = model.prunable_convs();
    let jobs: Vec<(usize, f64)> = (0..layers.len()).flat_map(|l| ratios.iter().map(move |&r| (l, r))).collect();
    let results = par::map_slice(&jobs, |&(l, r)| -> Result<SensitivityPoint> {
        let layer = &layers[l];
        let map = BTreeMap::from([(layer.clone(), r)]);
        let plan = match method {
            Method::L1 => build_plan_l1(model, &map)?,
            Method::Functional => {
                let cr = inputs
                    .clusters
                    .iter()
                    .find(|c| &c.layer == layer)
                    .ok_or_else(|| Error::Plan(format!("no clusters for layer `{layer}`")))?;
                build_plan_functional(std::slice::from_ref(cr), &inputs.scores, &map)?
            }
            Method::Taylor => build_plan_ranked(Method::Taylor, &inputs.scores, &map)?,
        };
        let pruned = apply_plan(model, &plan)?;
        let eval = evaluate(&pruned, data)?;
        Ok(SensitivityPoint { ratio: r, accuracy: eval.accuracy, removed: plan.total_removed() })
    });
    let mut points = results.into_iter();
    let mut curves = Vec::with_capacity(layers.len());
    for layer in layers {
        let pts = (&mut points).take(ratios.len()).collect::<Result<Vec<_>>>()?;
        curves.push(SensitivityCurve { layer, method, points: pts });
    }
    Ok(curves)
}

pub fn curves_to_csv(curves: &[SensitivityCurve]) -> String {
    let mut out = String::from("layer,ratio,accuracy,method\n");
    for c in curves {
        for p in &c.points {
            out.push_str(&format!("{},{},{:.6},{}\n", c.layer, p.ratio, p.accuracy, c.method.as_str()));
        }
    }
    out
}
