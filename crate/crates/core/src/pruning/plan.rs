use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::redundancy::{gradient_statistics, ClusterResult, ContributionTable, LOCKED};

/// Upper bound on any single layer's pruning ratio.
pub const MAX_LAYER_RATIO: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Functional,
    L1,
    Taylor,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Functional => "functional",
            Method::L1 => "l1",
            Method::Taylor => "taylor",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "functional" => Ok(Method::Functional),
            "l1" => Ok(Method::L1),
            "taylor" => Ok(Method::Taylor),
            _ => Err(Error::Config(format!("unknown pruning method `{s}` (functional, l1, taylor)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRemoval {
    pub cluster: i64,
    pub size: usize,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: String,
    /// Filter count of the layer the plan was built for.
    pub filters: usize,
    pub ratio: f64,
    /// Sorted filter indices to remove.
    pub remove: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<ClusterRemoval>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    #[serde(default)]
    pub config_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub method: Method,
    pub global_ratio: f64,
    pub layers: Vec<LayerPlan>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl PruningPlan {
    pub fn empty(method: Method) -> Self {
        Self { method, global_ratio: 0.0, layers: Vec::new(), provenance: Provenance::default() }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer == name)
    }

    pub fn total_removed(&self) -> usize {
        self.layers.iter().map(|l| l.remove.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_removed() == 0
    }

    pub fn ratios(&self) -> BTreeMap<String, f64> {
        self.layers.iter().map(|l| (l.layer.clone(), l.ratio)).collect()
    }
}

/// `floor(x + 1/2)`, robust to products like `0.35 * 10` landing just below
/// the half.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    /// Layer-name glob (`*` any run, `?` one character).
    pub pattern: String,
    pub coefficient: f64,
}

/// Layer-name patterns with ratio multipliers. The first matching pattern
/// wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerCoefficients(pub Vec<Coefficient>);

impl LayerCoefficients {
    pub fn new(pairs: &[(&str, f64)]) -> Result<Self> {
        let c = Self(pairs.iter().map(|&(p, c)| Coefficient { pattern: p.into(), coefficient: c }).collect());
        c.validate()?;
        Ok(c)
    }

    pub fn uniform(c: f64) -> Self {
        Self(vec![Coefficient { pattern: "*".into(), coefficient: c }])
    }

    /// Five-stage CIFAR multipliers 0.25:0.125:0.125:0.375:0.375.
    pub fn cifar_stages() -> Self {
        Self::new(&[("conv1*", 0.25), ("conv2*", 0.125), ("conv3*", 0.125), ("conv4*", 0.375), ("conv5*", 0.375)])
            .expect("positive")
    }

    /// Five-stage ImageNet multipliers 2:1:1:3:3.
    pub fn imagenet_stages() -> Self {
        Self::new(&[("conv1*", 2.0), ("conv2*", 1.0), ("conv3*", 1.0), ("conv4*", 3.0), ("conv5*", 3.0)]).expect("positive")
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.0 {
            if !(c.coefficient > 0.0 && c.coefficient.is_finite()) {
                return Err(Error::Config(format!("coefficient for `{}` must be positive, got {}", c.pattern, c.coefficient)));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, layer: &str) -> Option<f64> {
        self.0.iter().find(|c| glob_match(&c.pattern, layer)).map(|c| c.coefficient)
    }
}

pub fn glob_match(pattern: &str, name: &str) -> bool {
    fn go(p: &[char], n: &[char]) -> bool {
        match (p.first(), n.first()) {
            (None, None) => true,
            (Some('*'), _) => go(&p[1..], n) || (!n.is_empty() && go(p, &n[1..])),
            (Some('?'), Some(_)) => go(&p[1..], &n[1..]),
            (Some(a), Some(b)) if a == b => go(&p[1..], &n[1..]),
            _ => false,
        }
    }
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    go(&p, &n)
}

/// `r_l = clamp(R · coeff(l), 0, 0.95)` for every conv layer; layers that
/// cannot be pruned (non-first residual convs) get 0.
pub fn compute_layer_ratios(global: f64, coeffs: &LayerCoefficients, model: &ModelGraph) -> Result<BTreeMap<String, f64>> {
    if !(global > 0.0 && global < 1.0) {
        return Err(Error::Config(format!("global ratio must be in (0, 1), got {global}")));
    }
    coeffs.validate()?;
    let prunable = model.prunable_convs();
    let mut out = BTreeMap::new();
    for name in model.conv_names() {
        let r = if prunable.contains(&name) {
            let c = coeffs
                .lookup(&name)
                .ok_or_else(|| Error::Config(format!("no coefficient pattern matches layer `{name}`")))?;
            (global * c).clamp(0.0, MAX_LAYER_RATIO)
        } else {
            0.0
        };
        out.insert(name, r);
    }
    Ok(out)
}

fn ratio_for(ratios: &BTreeMap<String, f64>, layer: &str) -> Result<f64> {
    let r = *ratios.get(layer).ok_or_else(|| Error::Plan(format!("no ratio for layer `{layer}`")))?;
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Plan(format!("ratio {r} for `{layer}` outside [0, 1)")));
    }
    Ok(r)
}

/// Remove `round_half_up(r·I)` lowest-scored filters (ties to the lower
/// index), keeping at least one.
fn rank_layer(layer: &str, scores: &[f64], ratio: f64) -> LayerPlan {
    let n = scores.len();
    let m = round_half_up(ratio * n as f64).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut remove = order[..m].to_vec();
    remove.sort_unstable();
    LayerPlan { layer: layer.into(), filters: n, ratio, remove, clusters: None }
}

/// Cluster-balanced plan: each non-locked cluster of size `s` loses
/// `min(round_half_up(r·s), s − 1)` of its lowest-contribution filters.
pub fn build_plan_functional(
    clusters: &[ClusterResult],
    indices: &[ContributionTable],
    ratios: &BTreeMap<String, f64>,
) -> Result<PruningPlan> {
    let mut layers = Vec::new();
    for cr in clusters {
        let ratio = ratio_for(ratios, &cr.layer)?;
        let table = indices
            .iter()
            .find(|t| t.layer == cr.layer)
            .ok_or_else(|| Error::Plan(format!("no contribution index for layer `{}`", cr.layer)))?;
        let n = table.values.len();
        if cr.filters.len() != n || cr.filters.iter().any(|&f| f >= n) {
            return Err(Error::Plan(format!(
                "layer `{}`: clusters cover {} filters, contribution table {}",
                cr.layer,
                cr.filters.len(),
                n
            )));
        }
        let mut remove = Vec::new();
        let mut summary = Vec::new();
        for c in 0..cr.k as i64 {
            let mut members = cr.members(c);
            let s = members.len();
            let m = round_half_up(ratio * s as f64).min(s.saturating_sub(1));
            members.sort_by(|&a, &b| table.values[a].total_cmp(&table.values[b]).then(a.cmp(&b)));
            remove.extend_from_slice(&members[..m]);
            summary.push(ClusterRemoval { cluster: c, size: s, removed: m });
        }
        summary.push(ClusterRemoval { cluster: LOCKED, size: cr.locked().len(), removed: 0 });
        remove.sort_unstable();
        layers.push(LayerPlan { layer: cr.layer.clone(), filters: n, ratio, remove, clusters: Some(summary) });
    }
    Ok(PruningPlan { method: Method::Functional, global_ratio: 0.0, layers, provenance: Provenance::default() })
}

/// Sum of absolute kernel weights per filter.
pub fn l1_norms(model: &ModelGraph, layer: &str) -> Result<Vec<f64>> {
    let c = model.conv(layer)?;
    let per = c.in_channels * c.kernel * c.kernel;
    Ok(c.weight.data().chunks(per).map(|f| f.iter().map(|&w| (w as f64).abs()).sum()).collect())
}

/// Plan removing the filters with the smallest ℓ1 kernel norm.
pub fn build_plan_l1(model: &ModelGraph, ratios: &BTreeMap<String, f64>) -> Result<PruningPlan> {
    let mut layers = Vec::new();
    for (layer, _) in ratios {
        let ratio = ratio_for(ratios, layer)?;
        layers.push(rank_layer(layer, &l1_norms(model, layer)?, ratio));
    }
    Ok(PruningPlan { method: Method::L1, global_ratio: 0.0, layers, provenance: Provenance::default() })
}

/// Taylor scores `|mean(a·g)|` for every layer in `layers`.
pub fn taylor_scores(model: &ModelGraph, data: &LabeledDataset, layers: &[String], batch: usize) -> Result<Vec<ContributionTable>> {
    Ok(gradient_statistics(model, data, layers, crate::am::Hook::PostActivation, batch)?
        .into_iter()
        .map(|s| s.taylor)
        .collect())
}

/// Plan from precomputed score tables (lowest score removed first).
pub fn build_plan_ranked(method: Method, scores: &[ContributionTable], ratios: &BTreeMap<String, f64>) -> Result<PruningPlan> {
    let mut layers = Vec::new();
    for (layer, _) in ratios {
        let ratio = ratio_for(ratios, layer)?;
        let t = scores
            .iter()
            .find(|t| &t.layer == layer)
            .ok_or_else(|| Error::Plan(format!("no scores for layer `{layer}`")))?;
        layers.push(rank_layer(layer, &t.values, ratio));
    }
    Ok(PruningPlan { method, global_ratio: 0.0, layers, provenance: Provenance::default() })
}

pub fn build_plan_taylor(model: &ModelGraph, data: &LabeledDataset, ratios: &BTreeMap<String, f64>) -> Result<PruningPlan> {
    let layers: Vec<String> = ratios.keys().cloned().collect();
    for l in &layers {
        if !matches!(model.layer(l)?.layer, Layer::Conv2d(_)) {
            return Err(Error::Plan(format!("`{l}` is not a conv layer")));
        }
    }
    let scores = taylor_scores(model, data, &layers, 32)?;
    build_plan_ranked(Method::Taylor, &scores, ratios)
}
