//! Forward-pass FLOPs for one input image.

use serde::Serialize;

use crate::model::{Layer, ModelGraph};

/// Counting convention reported alongside every count.
pub const CONVENTION: &str = "multiply and add counted separately: conv = 2*Cin*Cout*k*k*Hout*Wout, \
dense = 2*in*out; relu and residual add = 1 per output element; batchnorm = 2 per element (scale, shift); \
maxpool = size*size comparisons per output element; flatten = 0; biases not counted";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: String,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub total: u64,
    pub per_layer: Vec<LayerFlops>,
    pub convention: String,
}

impl FlopReport {
    pub fn layer(&self, name: &str) -> Option<u64> {
        self.per_layer.iter().find(|l| l.name == name).map(|l| l.flops)
    }
}

pub fn count_flops(model: &ModelGraph) -> FlopReport {
    let shapes = model.layer_shapes();
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for (spec, out) in model.layers.iter().zip(&shapes) {
        let out_elems: u64 = out.iter().product::<usize>() as u64;
        let flops = match &spec.layer {
            Layer::Conv2d(c) => {
                2 * (c.in_channels * c.out_channels * c.kernel * c.kernel) as u64 * (out[1] * out[2]) as u64
            }
            Layer::Dense(d) => 2 * (d.in_features * d.out_features) as u64,
            Layer::BatchNorm(_) => 2 * out_elems,
            Layer::Relu | Layer::Add { .. } => out_elems,
            Layer::MaxPool2d { size, .. } => (size * size) as u64 * out_elems,
            Layer::Flatten => 0,
        };
        per_layer.push(LayerFlops { name: spec.name.clone(), kind: spec.layer.kind_name().into(), flops });
    }
    FlopReport { total: per_layer.iter().map(|l| l.flops).sum(), per_layer, convention: CONVENTION.into() }
}

/// Percentage reduction `(1 - after/before) * 100`.
pub fn reduction_pct(before: u64, after: u64) -> f64 {
    if before == 0 {
        return 0.0;
    }
    (1.0 - after as f64 / before as f64) * 100.0
}
