//! Reverse-mode differentiation over the model's layer set.
//!
//! [`forward`] evaluates a [`ModelGraph`] on a batch and records a tape with
//! one node per layer (plus input, channel edits and an optional loss node).
//! [`ForwardPass::backward`] walks the tape in reverse from any node and
//! returns gradients only for the requested targets: parameters, the input
//! batch, or a named layer's activation.

pub mod gradcheck;
pub mod kernels;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::par;
use crate::tensor::{Scalar, Tensor};

use kernels::ConvGeom;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm normalizes with batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool2d,
    Flatten,
    Dense,
    Add,
    ChannelEdit,
    SoftmaxCrossEntropy,
}

/// How per-sample losses are combined into the scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Edit applied to one channel of a layer's output during forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditKind {
    /// Force the channel to zero (gradient blocked).
    Zero,
    /// Add a constant to every spatial position (gradient passes).
    Shift(Scalar),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEdit {
    pub layer: String,
    pub channel: usize,
    pub kind: EditKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradTarget {
    Parameters,
    Input,
    Activation(String),
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<'a> {
    /// Stop after the named layer (its output becomes the pass output).
    pub stop_after: Option<&'a str>,
    pub edits: &'a [ChannelEdit],
}

#[derive(Debug, Clone)]
enum Saved {
    None,
    PoolArgmax(Vec<u32>),
    BatchNorm { xhat: Vec<Scalar>, inv_std: Vec<f64>, batch_stats: bool },
    Edit { channels: Vec<(usize, EditKind)> },
    Loss { probs: Vec<f64>, labels: Vec<usize>, reduction: Reduction },
}

#[derive(Debug, Clone)]
pub struct TapeNode {
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
    /// Model layer index, for layer nodes.
    pub layer: Option<usize>,
    pub value: Tensor,
    saved: Saved,
}

/// Batch statistics computed by a train-mode batchnorm, to be folded into
/// the running estimates by the caller.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub input: Option<Tensor>,
    pub activations: BTreeMap<String, Tensor>,
}

/// Result of a forward evaluation together with its tape.
pub struct ForwardPass<'m> {
    model: &'m ModelGraph,
    pub mode: Mode,
    nodes: Vec<TapeNode>,
    /// Layer name → node id of the layer's (possibly edited) output.
    by_layer: BTreeMap<String, NodeId>,
    /// Layer index → node id of the layer's raw op output.
    raw_by_layer: BTreeMap<usize, NodeId>,
    output: NodeId,
    pub bn_updates: Vec<BnUpdate>,
}

pub fn forward<'m>(model: &'m ModelGraph, input: &Tensor, mode: Mode) -> Result<ForwardPass<'m>> {
    forward_with(model, input, mode, &ForwardOptions::default())
}

pub fn forward_with<'m>(
    model: &'m ModelGraph,
    input: &Tensor,
    mode: Mode,
    opts: &ForwardOptions<'_>,
) -> Result<ForwardPass<'m>> {
    let expected = model.input_shape.to_vec();
    if input.ndim() != 4 || input.shape()[1..] != expected[..] {
        return Err(Error::LayerShape {
            layer: model.layers.first().map(|l| l.name.clone()).unwrap_or_else(|| "input".into()),
            expected,
            got: input.shape().to_vec(),
        });
    }
    if let Some(stop) = opts.stop_after {
        model.index_of(stop)?;
    }
    for e in opts.edits {
        model.index_of(&e.layer)?;
    }

    let mut pass = ForwardPass {
        model,
        mode,
        nodes: Vec::with_capacity(model.layers.len() + 2),
        by_layer: BTreeMap::new(),
        raw_by_layer: BTreeMap::new(),
        output: 0,
        bn_updates: Vec::new(),
    };
    pass.nodes.push(TapeNode { op: OpKind::Input, inputs: vec![], layer: None, value: input.clone(), saved: Saved::None });
    let mut cur: NodeId = 0;

    for (li, spec) in model.layers.iter().enumerate() {
        let x = &pass.nodes[cur].value;
        let (op, inputs, value, saved) = match &spec.layer {
            Layer::Conv2d(c) => {
                check_input(&spec.name, x, &[c.in_channels])?;
                (OpKind::Conv2d, vec![cur], conv_forward(x, c), Saved::None)
            }
            Layer::BatchNorm(b) => {
                check_input(&spec.name, x, &[b.channels])?;
                let (y, saved, update) = bn_forward(x, b, mode);
                if let Some((mean, var_unbiased)) = update {
                    pass.bn_updates.push(BnUpdate { layer: li, mean, var_unbiased });
                }
                (OpKind::BatchNorm, vec![cur], y, saved)
            }
            Layer::Relu => (OpKind::Relu, vec![cur], x.map(|v| if v > 0.0 { v } else { 0.0 }), Saved::None),
            Layer::MaxPool2d { size, stride } => {
                let (y, arg) = pool_forward(x, *size, *stride);
                (OpKind::MaxPool2d, vec![cur], y, Saved::PoolArgmax(arg))
            }
            Layer::Flatten => {
                let n = x.batch();
                let f = x.item_len();
                (OpKind::Flatten, vec![cur], x.clone().reshape(vec![n, f])?, Saved::None)
            }
            Layer::Dense(d) => {
                if x.ndim() != 2 || x.shape()[1] != d.in_features {
                    return Err(Error::LayerShape {
                        layer: spec.name.clone(),
                        expected: vec![x.batch(), d.in_features],
                        got: x.shape().to_vec(),
                    });
                }
                (OpKind::Dense, vec![cur], dense_forward(x, d), Saved::None)
            }
            Layer::Add { skip } => {
                let other = *pass.by_layer.get(skip).ok_or_else(|| Error::UnknownLayer(skip.clone()))?;
                let ov = &pass.nodes[other].value;
                if ov.shape() != x.shape() {
                    return Err(Error::LayerShape {
                        layer: spec.name.clone(),
                        expected: ov.shape().to_vec(),
                        got: x.shape().to_vec(),
                    });
                }
                let mut y = x.clone();
                y.add_assign(ov);
                (OpKind::Add, vec![cur, other], y, Saved::None)
            }
        };
        pass.nodes.push(TapeNode { op, inputs, layer: Some(li), value, saved });
        cur = pass.nodes.len() - 1;
        pass.raw_by_layer.insert(li, cur);

        let edits: Vec<(usize, EditKind)> = opts
            .edits
            .iter()
            .filter(|e| e.layer == spec.name)
            .map(|e| (e.channel, e.kind))
            .collect();
        if !edits.is_empty() {
            let v = &pass.nodes[cur].value;
            let channels = if v.ndim() >= 2 { v.shape()[1] } else { 0 };
            if let Some((c, _)) = edits.iter().find(|(c, _)| *c >= channels) {
                return Err(Error::Config(format!("edit channel {c} out of range for `{}`", spec.name)));
            }
            let y = apply_edits(v, &edits);
            pass.nodes.push(TapeNode {
                op: OpKind::ChannelEdit,
                inputs: vec![cur],
                layer: Some(li),
                value: y,
                saved: Saved::Edit { channels: edits },
            });
            cur = pass.nodes.len() - 1;
        }
        pass.by_layer.insert(spec.name.clone(), cur);
        if opts.stop_after == Some(spec.name.as_str()) {
            break;
        }
    }
    pass.output = cur;
    Ok(pass)
}

fn check_input(layer: &str, x: &Tensor, channels: &[usize]) -> Result<()> {
    if x.ndim() != 4 || x.shape()[1] != channels[0] {
        return Err(Error::LayerShape {
            layer: layer.to_string(),
            expected: vec![x.shape().first().copied().unwrap_or(0), channels[0]],
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

impl<'m> ForwardPass<'m> {
    pub fn output(&self) -> &Tensor {
        &self.nodes[self.output].value
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn model(&self) -> &ModelGraph {
        self.model
    }

    /// Output of the named layer (after any channel edits).
    pub fn activation(&self, layer: &str) -> Result<&Tensor> {
        Ok(&self.nodes[self.activation_node(layer)?].value)
    }

    pub fn activation_node(&self, layer: &str) -> Result<NodeId> {
        self.by_layer.get(layer).copied().ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Every recorded layer output keyed by layer name.
    pub fn activations(&self) -> BTreeMap<&str, &Tensor> {
        self.by_layer.iter().map(|(k, &v)| (k.as_str(), &self.nodes[v].value)).collect()
    }

    /// Append a softmax cross-entropy node on the current output. Returns the
    /// loss node and its value (accumulated in 64-bit).
    pub fn attach_loss(&mut self, labels: &[usize], reduction: Reduction) -> Result<(NodeId, f64)> {
        let logits = &self.nodes[self.output].value;
        if logits.ndim() != 2 || logits.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "loss expects (N, classes) logits for {} labels, got {:?}",
                labels.len(),
                logits.shape()
            )));
        }
        let classes = logits.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("label {bad} out of range for {classes} classes")));
        }
        let (probs, losses) = softmax_cross_entropy(logits, labels);
        let total: f64 = losses.iter().sum();
        let loss = match reduction {
            Reduction::Mean => total / labels.len() as f64,
            Reduction::Sum => total,
        };
        self.nodes.push(TapeNode {
            op: OpKind::SoftmaxCrossEntropy,
            inputs: vec![self.output],
            layer: None,
            value: Tensor::scalar(loss as Scalar),
            saved: Saved::Loss { probs, labels: labels.to_vec(), reduction },
        });
        let id = self.nodes.len() - 1;
        Ok((id, loss))
    }

    /// Backpropagate a scalar node with seed 1.
    pub fn backward(&self, loss: NodeId, targets: &[GradTarget]) -> Result<Gradients> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss node; use backward_from".into()));
        }
        self.backward_from(loss, Tensor::full(self.nodes[loss].value.shape(), 1.0), targets)
    }

    /// Backpropagate `seed` (shaped like node `from`'s value).
    pub fn backward_from(&self, from: NodeId, seed: Tensor, targets: &[GradTarget]) -> Result<Gradients> {
        if from >= self.nodes.len() || seed.shape() != self.nodes[from].value.shape() {
            return Err(Error::Shape("backward seed does not match the node value".into()));
        }
        let want_params = targets.contains(&GradTarget::Parameters);
        let want_input = targets.contains(&GradTarget::Input);
        let mut act_nodes = Vec::new();
        for t in targets {
            if let GradTarget::Activation(name) = t {
                act_nodes.push((name.clone(), self.activation_node(name)?));
            }
        }
        // Lowest node whose gradient we need.
        let mut floor = from;
        if want_input {
            floor = 0;
        }
        if want_params {
            if let Some(first) = self.nodes.iter().position(|n| {
                matches!(n.op, OpKind::Conv2d | OpKind::Dense | OpKind::BatchNorm)
            }) {
                floor = floor.min(first);
            }
        }
        for (_, id) in &act_nodes {
            floor = floor.min(*id);
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[from] = Some(seed);
        let mut out = Gradients::default();

        for id in (floor..=from).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some((name, _)) = act_nodes.iter().find(|(_, n)| *n == id) {
                out.activations.insert(name.clone(), g.clone());
            }
            let node = &self.nodes[id];
            let need_input = node.inputs.iter().any(|&i| i >= floor);
            let layer_name = node.layer.map(|l| self.model.layers[l].name.as_str());
            match node.op {
                OpKind::Input => {
                    if want_input {
                        out.input = Some(g);
                    }
                }
                OpKind::Conv2d => {
                    let Layer::Conv2d(c) = &self.model.layers[node.layer.unwrap()].layer else { unreachable!() };
                    let x = &self.nodes[node.inputs[0]].value;
                    let (dx, dw, db) = conv_backward(x, c, &g, need_input, want_params);
                    if want_params {
                        let n = layer_name.unwrap();
                        out.params.insert(format!("{n}.weight"), dw.unwrap());
                        out.params.insert(format!("{n}.bias"), db.unwrap());
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                OpKind::BatchNorm => {
                    let Layer::BatchNorm(b) = &self.model.layers[node.layer.unwrap()].layer else { unreachable!() };
                    let Saved::BatchNorm { xhat, inv_std, batch_stats } = &node.saved else { unreachable!() };
                    let (dx, dgamma, dbeta) = bn_backward(&g, b, xhat, inv_std, *batch_stats);
                    if want_params {
                        let n = layer_name.unwrap();
                        out.params.insert(format!("{n}.gamma"), dgamma);
                        out.params.insert(format!("{n}.beta"), dbeta);
                    }
                    if need_input {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                OpKind::Relu => {
                    if need_input {
                        let y = &node.value;
                        let mut dx = g;
                        for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        }
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                OpKind::MaxPool2d => {
                    if need_input {
                        let Saved::PoolArgmax(arg) = &node.saved else { unreachable!() };
                        let x = &self.nodes[node.inputs[0]].value;
                        accumulate(&mut grads, node.inputs[0], pool_backward(x, &g, arg));
                    }
                }
                OpKind::Flatten => {
                    if need_input {
                        let shape = self.nodes[node.inputs[0]].value.shape().to_vec();
                        accumulate(&mut grads, node.inputs[0], g.reshape(shape)?);
                    }
                }
                OpKind::Dense => {
                    let Layer::Dense(d) = &self.model.layers[node.layer.unwrap()].layer else { unreachable!() };
                    let x = &self.nodes[node.inputs[0]].value;
                    let (dx, dw, db) = dense_backward(x, d, &g, need_input, want_params);
                    if want_params {
                        let n = layer_name.unwrap();
                        out.params.insert(format!("{n}.weight"), dw.unwrap());
                        out.params.insert(format!("{n}.bias"), db.unwrap());
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                OpKind::Add => {
                    if node.inputs[1] >= floor {
                        accumulate(&mut grads, node.inputs[1], g.clone());
                    }
                    if node.inputs[0] >= floor {
                        accumulate(&mut grads, node.inputs[0], g);
                    }
                }
                OpKind::ChannelEdit => {
                    if need_input {
                        let Saved::Edit { channels } = &node.saved else { unreachable!() };
                        let mut dx = g;
                        for &(c, kind) in channels {
                            if kind == EditKind::Zero {
                                for_channel(&mut dx, c, |v| *v = 0.0);
                            }
                        }
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                OpKind::SoftmaxCrossEntropy => {
                    if need_input {
                        let Saved::Loss { probs, labels, reduction } = &node.saved else { unreachable!() };
                        let logits = &self.nodes[node.inputs[0]].value;
                        let classes = logits.shape()[1];
                        let scale = g.data()[0] as f64
                            / match reduction {
                                Reduction::Mean => labels.len() as f64,
                                Reduction::Sum => 1.0,
                            };
                        let mut dx = Tensor::zeros(logits.shape());
                        for (n, &label) in labels.iter().enumerate() {
                            for j in 0..classes {
                                let p = probs[n * classes + j] - if j == label { 1.0 } else { 0.0 };
                                dx.data_mut()[n * classes + j] = (p * scale) as Scalar;
                            }
                        }
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Node ids of the raw op output of each layer index.
    pub fn layer_node(&self, layer: usize) -> Option<NodeId> {
        self.raw_by_layer.get(&layer).copied()
    }
}

/// Softmax probabilities and per-sample cross-entropy losses, in 64-bit.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let classes = logits.shape()[1];
    let mut probs = vec![0.0f64; logits.len()];
    let mut losses = Vec::with_capacity(labels.len());
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.item(n);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let mut z = 0.0f64;
        for (j, &v) in row.iter().enumerate() {
            let e = ((v as f64) - max).exp();
            probs[n * classes + j] = e;
            z += e;
        }
        for p in &mut probs[n * classes..(n + 1) * classes] {
            *p /= z;
        }
        losses.push(-((row[label] as f64) - max - z.ln()));
    }
    (probs, losses)
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn for_channel(t: &mut Tensor, c: usize, mut f: impl FnMut(&mut Scalar)) {
    let n = t.batch();
    let channels = t.shape()[1];
    let plane: usize = t.shape()[2..].iter().product();
    let data = t.data_mut();
    for b in 0..n {
        let start = (b * channels + c) * plane;
        data[start..start + plane].iter_mut().for_each(&mut f);
    }
}

fn apply_edits(x: &Tensor, edits: &[(usize, EditKind)]) -> Tensor {
    let mut y = x.clone();
    for &(c, kind) in edits {
        match kind {
            EditKind::Zero => for_channel(&mut y, c, |v| *v = 0.0),
            EditKind::Shift(d) => for_channel(&mut y, c, |v| *v += d),
        }
    }
    y
}

fn geom(x: &Tensor, c: &crate::model::Conv2d) -> ConvGeom {
    let [_, ch, h, w] = x.dims4();
    ConvGeom { in_channels: ch, in_h: h, in_w: w, kernel: c.kernel, stride: c.stride, padding: c.padding }
}

fn conv_forward(x: &Tensor, c: &crate::model::Conv2d) -> Tensor {
    let g = geom(x, c);
    let n = x.batch();
    let (oh, ow) = (g.out_h(), g.out_w());
    let hw = oh * ow;
    let out_item = c.out_channels * hw;
    let mut y = Tensor::zeros(&[n, c.out_channels, oh, ow]);
    let w = c.weight.data();
    let bias = c.bias.data();
    par::for_each_chunk_mut(y.data_mut(), out_item, |i, out| {
        let mut cols = vec![0.0; g.patch_len() * hw];
        kernels::im2col(x.item(i), &g, &mut cols);
        kernels::matmul(w, &cols, out, c.out_channels, g.patch_len(), hw);
        for (f, row) in out.chunks_mut(hw).enumerate() {
            let b = bias[f];
            row.iter_mut().for_each(|v| *v += b);
        }
    });
    y
}

type ParamGrads = (Option<Tensor>, Option<Tensor>, Option<Tensor>);

fn conv_backward(x: &Tensor, c: &crate::model::Conv2d, dy: &Tensor, need_dx: bool, need_dw: bool) -> ParamGrads {
    let g = geom(x, c);
    let n = x.batch();
    let hw = g.out_h() * g.out_w();
    let pl = g.patch_len();
    let w = c.weight.data();
    // Per-sample partial results, reduced below in sample order.
    let per_sample: Vec<(Option<Vec<Scalar>>, Option<Vec<Scalar>>)> = par::map_range(n, |i| {
        let dyi = dy.item(i);
        let mut cols = vec![0.0; pl * hw];
        let dw = need_dw.then(|| {
            kernels::im2col(x.item(i), &g, &mut cols);
            let mut dw = vec![0.0; c.out_channels * pl];
            kernels::matmul_a_bt(dyi, &cols, &mut dw, c.out_channels, hw, pl);
            dw
        });
        let dx = need_dx.then(|| {
            kernels::matmul_at_b(w, dyi, &mut cols, c.out_channels, pl, hw);
            let mut dx = vec![0.0; x.item_len()];
            kernels::col2im(&cols, &g, &mut dx);
            dx
        });
        (dx, dw)
    });
    let dx = need_dx.then(|| {
        let mut data = Vec::with_capacity(x.len());
        for (d, _) in &per_sample {
            data.extend_from_slice(d.as_ref().unwrap());
        }
        Tensor::new(x.shape().to_vec(), data).unwrap()
    });
    let (dw, db) = if need_dw {
        let mut acc = vec![0.0f64; c.weight.len()];
        for (_, d) in &per_sample {
            for (a, &v) in acc.iter_mut().zip(d.as_ref().unwrap()) {
                *a += v as f64;
            }
        }
        let mut bacc = vec![0.0f64; c.out_channels];
        for i in 0..n {
            for (f, row) in dy.item(i).chunks(hw).enumerate() {
                bacc[f] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        (Some(to_tensor(c.weight.shape(), &acc)), Some(to_tensor(c.bias.shape(), &bacc)))
    } else {
        (None, None)
    };
    (dx, dw, db)
}

fn to_tensor(shape: &[usize], acc: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), acc.iter().map(|&v| v as Scalar).collect()).unwrap()
}

type BnForward = (Tensor, Saved, Option<(Vec<f64>, Vec<f64>)>);

fn bn_forward(x: &Tensor, b: &crate::model::BatchNorm, mode: Mode) -> BnForward {
    let [n, ch, h, w] = x.dims4();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut mean = vec![0.0f64; ch];
    let mut var = vec![0.0f64; ch];
    let batch_stats = mode == Mode::Train;
    if batch_stats {
        for c in 0..ch {
            let mut s = 0.0f64;
            for i in 0..n {
                let start = (i * ch + c) * plane;
                s += x.data()[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            mean[c] = s / m;
            let mut q = 0.0f64;
            for i in 0..n {
                let start = (i * ch + c) * plane;
                q += x.data()[start..start + plane].iter().map(|&v| (v as f64 - mean[c]).powi(2)).sum::<f64>();
            }
            var[c] = q / m;
        }
    } else {
        for c in 0..ch {
            mean[c] = b.running_mean.data()[c] as f64;
            var[c] = b.running_var.data()[c] as f64;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0 as Scalar; x.len()];
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for c in 0..ch {
            let start = (i * ch + c) * plane;
            let gamma = b.gamma.data()[c] as f64;
            let beta = b.beta.data()[c] as f64;
            for k in start..start + plane {
                let xh = (x.data()[k] as f64 - mean[c]) * inv_std[c];
                xhat[k] = xh as Scalar;
                y.data_mut()[k] = (gamma * xh + beta) as Scalar;
            }
        }
    }
    let update = batch_stats.then(|| {
        let unbiased = if m > 1.0 { var.iter().map(|v| v * m / (m - 1.0)).collect() } else { var.clone() };
        (mean, unbiased)
    });
    (y, Saved::BatchNorm { xhat, inv_std, batch_stats }, update)
}

fn bn_backward(
    dy: &Tensor,
    b: &crate::model::BatchNorm,
    xhat: &[Scalar],
    inv_std: &[f64],
    batch_stats: bool,
) -> (Tensor, Tensor, Tensor) {
    let [n, ch, h, w] = dy.dims4();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dgamma = vec![0.0f64; ch];
    let mut dbeta = vec![0.0f64; ch];
    for i in 0..n {
        for c in 0..ch {
            let start = (i * ch + c) * plane;
            for k in start..start + plane {
                let d = dy.data()[k] as f64;
                dbeta[c] += d;
                dgamma[c] += d * xhat[k] as f64;
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for i in 0..n {
        for c in 0..ch {
            let gamma = b.gamma.data()[c] as f64;
            let start = (i * ch + c) * plane;
            for k in start..start + plane {
                let d = dy.data()[k] as f64;
                let v = if batch_stats {
                    // dxhat = dy·γ; sums of dxhat and dxhat·xhat are γ·dbeta and γ·dgamma.
                    gamma * inv_std[c] * (d - dbeta[c] / m - xhat[k] as f64 * dgamma[c] / m)
                } else {
                    gamma * inv_std[c] * d
                };
                dx.data_mut()[k] = v as Scalar;
            }
        }
    }
    (dx, to_tensor(b.gamma.shape(), &dgamma), to_tensor(b.beta.shape(), &dbeta))
}

fn pool_forward(x: &Tensor, size: usize, stride: usize) -> (Tensor, Vec<u32>) {
    let [n, ch, h, w] = x.dims4();
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let item = ch * oh * ow;
    let mut y = Tensor::zeros(&[n, ch, oh, ow]);
    let mut arg = vec![0u32; n * item];
    for i in 0..n {
        kernels::maxpool(
            x.item(i),
            ch,
            h,
            w,
            size,
            stride,
            &mut y.data_mut()[i * item..(i + 1) * item],
            &mut arg[i * item..(i + 1) * item],
        );
    }
    (y, arg)
}

fn pool_backward(x: &Tensor, dy: &Tensor, arg: &[u32]) -> Tensor {
    let [n, ch, h, w] = x.dims4();
    let [_, _, oh, ow] = dy.dims4();
    let mut dx = Tensor::zeros(x.shape());
    for i in 0..n {
        for c in 0..ch {
            for o in 0..oh * ow {
                let oi = (i * ch + c) * oh * ow + o;
                let xi = (i * ch + c) * h * w + arg[oi] as usize;
                dx.data_mut()[xi] += dy.data()[oi];
            }
        }
    }
    dx
}

fn dense_forward(x: &Tensor, d: &crate::model::Dense) -> Tensor {
    let n = x.batch();
    let mut y = Tensor::zeros(&[n, d.out_features]);
    let w = d.weight.data();
    par::for_each_chunk_mut(y.data_mut(), d.out_features, |i, row| {
        kernels::matmul_a_bt(x.item(i), w, row, 1, d.in_features, d.out_features);
        for (v, &b) in row.iter_mut().zip(d.bias.data()) {
            *v += b;
        }
    });
    y
}

fn dense_backward(x: &Tensor, d: &crate::model::Dense, dy: &Tensor, need_dx: bool, need_dw: bool) -> ParamGrads {
    let n = x.batch();
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        let w = d.weight.data();
        par::for_each_chunk_mut(dx.data_mut(), d.in_features, |i, row| {
            kernels::matmul(dy.item(i), w, row, 1, d.out_features, d.in_features);
        });
        dx
    });
    let (dw, db) = if need_dw {
        let mut acc = vec![0.0f64; d.weight.len()];
        let mut bacc = vec![0.0f64; d.out_features];
        for i in 0..n {
            let xi = x.item(i);
            for (o, &g) in dy.item(i).iter().enumerate() {
                let g = g as f64;
                bacc[o] += g;
                if g == 0.0 {
                    continue;
                }
                for (a, &xv) in acc[o * d.in_features..(o + 1) * d.in_features].iter_mut().zip(xi) {
                    *a += g * xv as f64;
                }
            }
        }
        (Some(to_tensor(d.weight.shape(), &acc)), Some(to_tensor(d.bias.shape(), &bacc)))
    } else {
        (None, None)
    };
    (dx, dw, db)
}
