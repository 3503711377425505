use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Residual-block membership of a layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTag {
    pub block: String,
    /// First convolution of the block. Only these may be pruned inside a
    /// residual block.
    pub first: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// (out, in, k, k)
    pub weight: Tensor,
    /// (out)
    pub bias: Tensor,
    /// Index of each surviving filter in the unpruned layer.
    pub filter_origin: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// (out, in)
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool2d { size: usize, stride: usize },
    Flatten,
    Dense(Dense),
    /// Adds the output of the named earlier layer to the running value.
    Add { skip: String },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Add { .. } => "add",
        }
    }

    fn is_channel_preserving(&self) -> bool {
        matches!(self, Layer::BatchNorm(_) | Layer::Relu | Layer::MaxPool2d { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub layer: Layer,
    pub block: Option<BlockTag>,
}

/// Architecture description without parameters. This is the JSON layer file
/// format and the graph section of checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// (C, H, W)
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDesc {
    Conv {
        name: String,
        out: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        padding: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<BlockTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        filter_origin: Option<Vec<usize>>,
    },
    Batchnorm {
        name: String,
    },
    Relu {
        name: String,
    },
    Maxpool {
        name: String,
        #[serde(default = "two")]
        size: usize,
        #[serde(default = "two")]
        stride: usize,
    },
    Flatten {
        name: String,
    },
    Dense {
        name: String,
        out: usize,
    },
    Add {
        name: String,
        skip: String,
    },
}

fn default_kernel() -> usize {
    3
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}

/// Ordered layer graph with parameters. Layers run in sequence; `Add`
/// layers pull in an earlier layer's output to form residual connections.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// How a pruned conv's channels propagate to the rest of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelChain {
    pub conv: usize,
    /// Channel-preserving layers between the conv and its consumer.
    pub passthrough: Vec<usize>,
    /// Next weighted layer reading these channels, if any.
    pub consumer: Option<usize>,
    /// Spatial size per channel seen by a dense consumer after flatten.
    pub flatten_hw: Option<usize>,
    /// The channels reach a residual addition (directly or as a skip source).
    pub feeds_residual: bool,
}

impl ModelGraph {
    /// Build a model from an architecture, initializing parameters
    /// (He-normal for conv/dense weights, zero biases, BN scale 1 shift 0)
    /// from `seed`.
    pub fn from_arch(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::skeleton(arch)?;
        for spec in &mut model.layers {
            match &mut spec.layer {
                Layer::Conv2d(c) => {
                    let fan_in = (c.in_channels * c.kernel * c.kernel) as f64;
                    fill_normal(&mut c.weight, (2.0 / fan_in).sqrt(), &mut rng);
                }
                Layer::Dense(d) => {
                    fill_normal(&mut d.weight, (2.0 / d.in_features as f64).sqrt(), &mut rng);
                }
                _ => {}
            }
        }
        Ok(model)
    }

    /// Structure with zero weights (BN scale 1, running variance 1).
    pub fn skeleton(arch: &ArchSpec) -> Result<Self> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut layers = Vec::with_capacity(arch.layers.len());
        // (channels, h, w) or (features) as we walk
        let mut shape: Vec<usize> = arch.input_shape.to_vec();
        let mut shapes_by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        if arch.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero dimension", arch.input_shape)));
        }
        for (i, desc) in arch.layers.iter().enumerate() {
            let name = desc.name().to_string();
            if seen.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate layer name `{name}`")));
            }
            let (layer, block, out_shape) = match desc {
                LayerDesc::Conv { out, kernel, stride, padding, block, filter_origin, .. } => {
                    if shape.len() != 3 {
                        return Err(layer_shape(&name, "(C,H,W)", &shape));
                    }
                    if *out == 0 || *kernel == 0 || *stride == 0 {
                        return Err(Error::Config(format!("conv `{name}` needs ≥1 filters, kernel and stride")));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(layer_shape(&name, "spatial size ≥ kernel", &shape));
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    let origin = filter_origin.clone().unwrap_or_else(|| (0..*out).collect());
                    if origin.len() != *out {
                        return Err(Error::Config(format!("conv `{name}` filter_origin length {} != {out}", origin.len())));
                    }
                    let conv = Conv2d {
                        in_channels: c,
                        out_channels: *out,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        weight: Tensor::zeros(&[*out, c, *kernel, *kernel]),
                        bias: Tensor::zeros(&[*out]),
                        filter_origin: origin,
                    };
                    (Layer::Conv2d(conv), block.clone(), vec![*out, oh, ow])
                }
                LayerDesc::Batchnorm { .. } => {
                    if shape.len() != 3 {
                        return Err(layer_shape(&name, "(C,H,W)", &shape));
                    }
                    let c = shape[0];
                    let bn = BatchNorm {
                        channels: c,
                        gamma: Tensor::full(&[c], 1.0),
                        beta: Tensor::zeros(&[c]),
                        running_mean: Tensor::zeros(&[c]),
                        running_var: Tensor::full(&[c], 1.0),
                    };
                    (Layer::BatchNorm(bn), None, shape.clone())
                }
                LayerDesc::Relu { .. } => (Layer::Relu, None, shape.clone()),
                LayerDesc::Maxpool { size, stride, .. } => {
                    if shape.len() != 3 || shape[1] < *size || shape[2] < *size || *size == 0 || *stride == 0 {
                        return Err(layer_shape(&name, "(C,H,W) with H,W ≥ pool size", &shape));
                    }
                    let oh = (shape[1] - size) / stride + 1;
                    let ow = (shape[2] - size) / stride + 1;
                    (Layer::MaxPool2d { size: *size, stride: *stride }, None, vec![shape[0], oh, ow])
                }
                LayerDesc::Flatten { .. } => (Layer::Flatten, None, vec![shape.iter().product()]),
                LayerDesc::Dense { out, .. } => {
                    if shape.len() != 1 {
                        return Err(layer_shape(&name, "(features)", &shape));
                    }
                    if *out == 0 {
                        return Err(Error::Config(format!("dense `{name}` needs ≥1 outputs")));
                    }
                    let d = Dense {
                        in_features: shape[0],
                        out_features: *out,
                        weight: Tensor::zeros(&[*out, shape[0]]),
                        bias: Tensor::zeros(&[*out]),
                    };
                    (Layer::Dense(d), None, vec![*out])
                }
                LayerDesc::Add { skip, .. } => {
                    let skip_shape = shapes_by_name
                        .get(skip)
                        .ok_or_else(|| Error::Config(format!("add `{name}` refers to unknown earlier layer `{skip}`")))?;
                    if *skip_shape != shape {
                        return Err(Error::LayerShape { layer: name, expected: skip_shape.clone(), got: shape });
                    }
                    (Layer::Add { skip: skip.clone() }, None, shape.clone())
                }
            };
            shapes_by_name.insert(name.clone(), out_shape.clone());
            shape = out_shape;
            layers.push(LayerSpec { name, layer, block });
        }
        Ok(Self { name: arch.name.clone(), input_shape: arch.input_shape, layers })
    }

    /// Parameter-free description of the current structure.
    pub fn arch(&self) -> ArchSpec {
        let layers = self
            .layers
            .iter()
            .map(|spec| {
                let name = spec.name.clone();
                match &spec.layer {
                    Layer::Conv2d(c) => LayerDesc::Conv {
                        name,
                        out: c.out_channels,
                        kernel: c.kernel,
                        stride: c.stride,
                        padding: c.padding,
                        block: spec.block.clone(),
                        filter_origin: Some(c.filter_origin.clone()),
                    },
                    Layer::BatchNorm(_) => LayerDesc::Batchnorm { name },
                    Layer::Relu => LayerDesc::Relu { name },
                    Layer::MaxPool2d { size, stride } => LayerDesc::Maxpool { name, size: *size, stride: *stride },
                    Layer::Flatten => LayerDesc::Flatten { name },
                    Layer::Dense(d) => LayerDesc::Dense { name, out: d.out_features },
                    Layer::Add { skip } => LayerDesc::Add { name, skip: skip.clone() },
                }
            })
            .collect();
        ArchSpec { name: self.name.clone(), input_shape: self.input_shape, layers }
    }

    /// Re-run shape inference over the current parameters.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::skeleton(&self.arch())?;
        for (a, b) in self.layers.iter().zip(&rebuilt.layers) {
            let ok = match (&a.layer, &b.layer) {
                (Layer::Conv2d(x), Layer::Conv2d(y)) => {
                    x.in_channels == y.in_channels
                        && x.weight.shape() == y.weight.shape()
                        && x.bias.shape() == y.bias.shape()
                }
                (Layer::BatchNorm(x), Layer::BatchNorm(y)) => {
                    x.channels == y.channels
                        && x.gamma.shape() == y.gamma.shape()
                        && x.beta.shape() == y.beta.shape()
                        && x.running_mean.shape() == y.running_mean.shape()
                        && x.running_var.shape() == y.running_var.shape()
                }
                (Layer::Dense(x), Layer::Dense(y)) => {
                    x.in_features == y.in_features && x.weight.shape() == y.weight.shape() && x.bias.shape() == y.bias.shape()
                }
                _ => true,
            };
            if !ok {
                return Err(Error::Shape(format!("layer `{}` parameters disagree with inferred shapes", a.name)));
            }
        }
        Ok(())
    }

    /// Output shape (excluding batch) of every layer, in order.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            shape = match &spec.layer {
                Layer::Conv2d(c) => {
                    let oh = (shape[1] + 2 * c.padding - c.kernel) / c.stride + 1;
                    let ow = (shape[2] + 2 * c.padding - c.kernel) / c.stride + 1;
                    vec![c.out_channels, oh, ow]
                }
                Layer::MaxPool2d { size, stride } => {
                    vec![shape[0], (shape[1] - size) / stride + 1, (shape[2] - size) / stride + 1]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Dense(d) => vec![d.out_features],
                _ => shape,
            };
            out.push(shape.clone());
        }
        out
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec> {
        Ok(&self.layers[self.index_of(name)?])
    }

    pub fn conv(&self, name: &str) -> Result<&Conv2d> {
        match &self.layer(name)?.layer {
            Layer::Conv2d(c) => Ok(c),
            other => Err(Error::Config(format!("layer `{name}` is a {} layer, not conv", other.kind_name()))),
        }
    }

    /// Names of all conv layers in order.
    pub fn conv_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| matches!(l.layer, Layer::Conv2d(_)))
            .map(|l| l.name.clone())
            .collect()
    }

    /// Conv layers whose filters can be removed without breaking a residual
    /// addition.
    pub fn prunable_convs(&self) -> Vec<String> {
        self.conv_names()
            .into_iter()
            .filter(|n| {
                let idx = self.index_of(n).expect("conv name from model");
                !self.channel_chain(idx).feeds_residual
            })
            .collect()
    }

    /// Follow conv `idx`'s output channels to the next weighted layer.
    pub fn channel_chain(&self, idx: usize) -> ChannelChain {
        let skip_sources: Vec<&str> = self
            .layers
            .iter()
            .filter_map(|l| match &l.layer {
                Layer::Add { skip } => Some(skip.as_str()),
                _ => None,
            })
            .collect();
        let mut chain = ChannelChain {
            conv: idx,
            passthrough: Vec::new(),
            consumer: None,
            flatten_hw: None,
            feeds_residual: skip_sources.contains(&self.layers[idx].name.as_str()),
        };
        let shapes = self.layer_shapes();
        let mut j = idx + 1;
        while j < self.layers.len() {
            let spec = &self.layers[j];
            if skip_sources.contains(&spec.name.as_str()) {
                chain.feeds_residual = true;
            }
            match &spec.layer {
                l if l.is_channel_preserving() => chain.passthrough.push(j),
                Layer::Add { .. } => {
                    chain.feeds_residual = true;
                    chain.passthrough.push(j);
                }
                Layer::Flatten => {
                    let prev = &shapes[j - 1];
                    chain.flatten_hw = Some(prev[1] * prev[2]);
                    chain.passthrough.push(j);
                }
                Layer::Conv2d(_) | Layer::Dense(_) => {
                    chain.consumer = Some(j);
                    break;
                }
                _ => unreachable!(),
            }
            j += 1;
        }
        chain
    }

    /// Named trainable parameters in layer order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for spec in &self.layers {
            match &spec.layer {
                Layer::Conv2d(c) => {
                    out.push((format!("{}.weight", spec.name), &c.weight));
                    out.push((format!("{}.bias", spec.name), &c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{}.gamma", spec.name), &b.gamma));
                    out.push((format!("{}.beta", spec.name), &b.beta));
                }
                Layer::Dense(d) => {
                    out.push((format!("{}.weight", spec.name), &d.weight));
                    out.push((format!("{}.bias", spec.name), &d.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for spec in &mut self.layers {
            match &mut spec.layer {
                Layer::Conv2d(c) => {
                    out.push((format!("{}.weight", spec.name), &mut c.weight));
                    out.push((format!("{}.bias", spec.name), &mut c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{}.gamma", spec.name), &mut b.gamma));
                    out.push((format!("{}.beta", spec.name), &mut b.beta));
                }
                Layer::Dense(d) => {
                    out.push((format!("{}.weight", spec.name), &mut d.weight));
                    out.push((format!("{}.bias", spec.name), &mut d.bias));
                }
                _ => {}
            }
        }
        out
    }

    /// All stored tensors (parameters plus BN running statistics).
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.parameters();
        for spec in &self.layers {
            if let Layer::BatchNorm(b) = &spec.layer {
                out.push((format!("{}.running_mean", spec.name), &b.running_mean));
                out.push((format!("{}.running_var", spec.name), &b.running_var));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> BTreeMap<String, &mut Tensor> {
        let mut out = BTreeMap::new();
        for spec in &mut self.layers {
            let n = &spec.name;
            match &mut spec.layer {
                Layer::Conv2d(c) => {
                    out.insert(format!("{n}.weight"), &mut c.weight);
                    out.insert(format!("{n}.bias"), &mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.insert(format!("{n}.gamma"), &mut b.gamma);
                    out.insert(format!("{n}.beta"), &mut b.beta);
                    out.insert(format!("{n}.running_mean"), &mut b.running_mean);
                    out.insert(format!("{n}.running_var"), &mut b.running_var);
                }
                Layer::Dense(d) => {
                    out.insert(format!("{n}.weight"), &mut d.weight);
                    out.insert(format!("{n}.bias"), &mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Number of output classes (width of the final dense layer).
    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match &l.layer {
            Layer::Dense(d) => Some(d.out_features),
            _ => None,
        })
    }
}

fn fill_normal(t: &mut Tensor, std: f64, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = normal.sample(rng) as Scalar;
    }
}

fn layer_shape(name: &str, expected: &str, got: &[usize]) -> Error {
    Error::Shape(format!("layer `{name}` expects input {expected}, got {got:?}"))
}

impl LayerDesc {
    pub fn name(&self) -> &str {
        match self {
            LayerDesc::Conv { name, .. }
            | LayerDesc::Batchnorm { name }
            | LayerDesc::Relu { name }
            | LayerDesc::Maxpool { name, .. }
            | LayerDesc::Flatten { name }
            | LayerDesc::Dense { name, .. }
            | LayerDesc::Add { name, .. } => name,
        }
    }
}
