use crate::autodiff::{ChannelEdit, EditKind};
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::tensor::Tensor;

use super::plan::PruningPlan;

/// Keep rows `keep` along dimension 0 of a tensor viewed as (rows, rest).
fn select_rows(t: &Tensor, keep: &[usize]) -> Tensor {
    let rows = t.shape()[0];
    let row = if rows == 0 { 0 } else { t.len() / rows };
    let mut data = Vec::with_capacity(keep.len() * row);
    for &r in keep {
        data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = keep.len();
    Tensor::new(shape, data).expect("row selection keeps shape consistent")
}

/// Keep input channels `keep` of a conv weight (out, in, k, k).
fn select_in_channels(w: &Tensor, keep: &[usize]) -> Tensor {
    let s = w.shape();
    let (out, inn, kk) = (s[0], s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(out * keep.len() * kk);
    for o in 0..out {
        for &i in keep {
            let off = (o * inn + i) * kk;
            data.extend_from_slice(&w.data()[off..off + kk]);
        }
    }
    Tensor::new(vec![out, keep.len(), s[2], s[3]], data).expect("channel selection keeps shape consistent")
}

/// Keep the flatten columns of channels `keep` in a dense weight (out, C·hw).
fn select_dense_columns(w: &Tensor, keep: &[usize], hw: usize) -> Tensor {
    let (out, inn) = (w.shape()[0], w.shape()[1]);
    let mut data = Vec::with_capacity(out * keep.len() * hw);
    for o in 0..out {
        for &c in keep {
            let off = o * inn + c * hw;
            data.extend_from_slice(&w.data()[off..off + hw]);
        }
    }
    Tensor::new(vec![out, keep.len() * hw], data).expect("column selection keeps shape consistent")
}

fn check_layer(model: &ModelGraph, plan_layer: &super::plan::LayerPlan) -> Result<usize> {
    let idx = model.index_of(&plan_layer.layer).map_err(|_| Error::Plan(format!("no layer `{}`", plan_layer.layer)))?;
    let Layer::Conv2d(conv) = &model.layers[idx].layer else {
        return Err(Error::Plan(format!("`{}` is not a conv layer", plan_layer.layer)));
    };
    if plan_layer.remove.is_empty() {
        return Ok(idx);
    }
    if conv.out_channels != plan_layer.filters {
        return Err(Error::Plan(format!(
            "plan expects {} filters in `{}`, model has {}",
            plan_layer.filters, plan_layer.layer, conv.out_channels
        )));
    }
    if model.channel_chain(idx).feeds_residual {
        return Err(Error::NotPrunable(plan_layer.layer.clone()));
    }
    let mut seen = vec![false; conv.out_channels];
    for &f in &plan_layer.remove {
        if f >= conv.out_channels || std::mem::replace(&mut seen[f], true) {
            return Err(Error::Plan(format!("invalid or repeated filter {f} for `{}`", plan_layer.layer)));
        }
    }
    if plan_layer.remove.len() >= conv.out_channels {
        return Err(Error::Plan(format!("plan removes every filter of `{}`", plan_layer.layer)));
    }
    Ok(idx)
}

/// Remove the planned filters and every parameter slice that reads them.
/// The input model is not modified.
pub fn apply_plan(model: &ModelGraph, plan: &PruningPlan) -> Result<ModelGraph> {
    let mut out = model.clone();
    for lp in &plan.layers {
        let idx = check_layer(model, lp)?;
        if lp.remove.is_empty() {
            continue;
        }
        let keep: Vec<usize> = (0..lp.filters).filter(|f| !lp.remove.contains(f)).collect();
        let chain = model.channel_chain(idx);

        if let Layer::Conv2d(c) = &mut out.layers[idx].layer {
            c.weight = select_rows(&c.weight, &keep);
            c.bias = select_rows(&c.bias, &keep);
            c.filter_origin = keep.iter().map(|&k| c.filter_origin[k]).collect();
            c.out_channels = keep.len();
        }
        for &j in &chain.passthrough {
            if let Layer::BatchNorm(bn) = &mut out.layers[j].layer {
                bn.gamma = select_rows(&bn.gamma, &keep);
                bn.beta = select_rows(&bn.beta, &keep);
                bn.running_mean = select_rows(&bn.running_mean, &keep);
                bn.running_var = select_rows(&bn.running_var, &keep);
                bn.channels = keep.len();
            }
        }
        match chain.consumer.map(|j| &mut out.layers[j].layer) {
            Some(Layer::Conv2d(next)) => {
                next.weight = select_in_channels(&next.weight, &keep);
                next.in_channels = keep.len();
            }
            Some(Layer::Dense(d)) => {
                let hw = chain.flatten_hw.ok_or_else(|| Error::Plan("dense consumer without flatten".into()))?;
                d.weight = select_dense_columns(&d.weight, &keep, hw);
                d.in_features = keep.len() * hw;
            }
            _ => {}
        }
    }
    out.validate()?;
    Ok(out)
}

/// Edits that zero each planned filter's output right before its consumer
/// (after batchnorm, activation and pooling). Forwarding the original model
/// with these edits must match the pruned model.
pub fn mask_edits(model: &ModelGraph, plan: &PruningPlan) -> Result<Vec<ChannelEdit>> {
    let mut edits = Vec::new();
    for lp in &plan.layers {
        let idx = check_layer(model, lp)?;
        let chain = model.channel_chain(idx);
        let at = chain
            .passthrough
            .iter()
            .rev()
            .find(|&&j| !matches!(model.layers[j].layer, Layer::Flatten))
            .copied()
            .unwrap_or(idx);
        for &f in &lp.remove {
            edits.push(ChannelEdit { layer: model.layers[at].name.clone(), channel: f, kind: EditKind::Zero });
        }
    }
    Ok(edits)
}
