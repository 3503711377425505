//! Registered architectures.
//!
//! | name           | input     | conv filters                          |
//! |----------------|-----------|---------------------------------------|
//! | `convnet-desk` | 1×28×28   | 8-16-16-32                            |
//! | `convnet-paper`| 3×32×32   | 96-256-384-384-256                    |
//! | `vgg-desk`     | 1×28×28   | 8-8 / 16-16 / 32-32                   |
//! | `resnet-desk`  | 1×28×28   | stem 16, two basic blocks of 16       |
//!
//! All convolutions are 3×3, stride 1, padding 1, followed by batchnorm and
//! ReLU.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::graph::{ArchSpec, BlockTag, LayerDesc, ModelGraph};

pub const REGISTERED: [&str; 4] = ["convnet-desk", "convnet-paper", "vgg-desk", "resnet-desk"];

/// Resolve a registered name, or read a JSON architecture file.
pub fn arch_by_name(spec: &str) -> Result<ArchSpec> {
    match spec {
        "convnet-desk" => Ok(convnet_desk()),
        "convnet-paper" => Ok(convnet_paper()),
        "vgg-desk" => Ok(vgg_desk()),
        "resnet-desk" => Ok(resnet_desk()),
        other if other.ends_with(".json") => {
            let path = Path::new(other);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        other => Err(Error::UnknownArchitecture(other.to_string())),
    }
}

pub fn build_model(spec: &str, seed: u64) -> Result<ModelGraph> {
    ModelGraph::from_arch(&arch_by_name(spec)?, seed)
}

struct Builder {
    layers: Vec<LayerDesc>,
}

impl Builder {
    fn new() -> Self {
        Self { layers: Vec::new() }
    }

    fn conv_bn_relu(&mut self, name: &str, out: usize, block: Option<BlockTag>) -> &mut Self {
        self.conv_bn(name, out, block);
        self.layers.push(LayerDesc::Relu { name: format!("{name}_relu") });
        self
    }

    fn conv_bn(&mut self, name: &str, out: usize, block: Option<BlockTag>) -> &mut Self {
        self.layers.push(LayerDesc::Conv {
            name: name.to_string(),
            out,
            kernel: 3,
            stride: 1,
            padding: 1,
            block,
            filter_origin: None,
        });
        self.layers.push(LayerDesc::Batchnorm { name: format!("{name}_bn") });
        self
    }

    fn pool(&mut self, name: &str) -> &mut Self {
        self.layers.push(LayerDesc::Maxpool { name: name.to_string(), size: 2, stride: 2 });
        self
    }

    fn head(&mut self, classes: usize) -> &mut Self {
        self.layers.push(LayerDesc::Flatten { name: "flatten".into() });
        self.layers.push(LayerDesc::Dense { name: "fc".into(), out: classes });
        self
    }

    fn finish(&mut self, name: &str, input_shape: [usize; 3]) -> ArchSpec {
        ArchSpec { name: name.into(), input_shape, layers: std::mem::take(&mut self.layers) }
    }
}

pub fn convnet_desk() -> ArchSpec {
    Builder::new()
        .conv_bn_relu("conv1", 8, None)
        .pool("pool1")
        .conv_bn_relu("conv2", 16, None)
        .pool("pool2")
        .conv_bn_relu("conv3", 16, None)
        .conv_bn_relu("conv4", 32, None)
        .pool("pool4")
        .head(10)
        .finish("convnet-desk", [1, 28, 28])
}

pub fn convnet_paper() -> ArchSpec {
    Builder::new()
        .conv_bn_relu("conv1", 96, None)
        .pool("pool1")
        .conv_bn_relu("conv2", 256, None)
        .pool("pool2")
        .conv_bn_relu("conv3", 384, None)
        .conv_bn_relu("conv4", 384, None)
        .conv_bn_relu("conv5", 256, None)
        .pool("pool5")
        .head(10)
        .finish("convnet-paper", [3, 32, 32])
}

pub fn vgg_desk() -> ArchSpec {
    Builder::new()
        .conv_bn_relu("conv1_1", 8, None)
        .conv_bn_relu("conv1_2", 8, None)
        .pool("pool1")
        .conv_bn_relu("conv2_1", 16, None)
        .conv_bn_relu("conv2_2", 16, None)
        .pool("pool2")
        .conv_bn_relu("conv3_1", 32, None)
        .conv_bn_relu("conv3_2", 32, None)
        .pool("pool3")
        .head(10)
        .finish("vgg-desk", [1, 28, 28])
}

pub fn resnet_desk() -> ArchSpec {
    let mut b = Builder::new();
    b.conv_bn_relu("stem", 16, None);
    let mut input = "stem_relu".to_string();
    for (i, pool) in [(1, "pool1"), (2, "pool2")] {
        let block = format!("block{i}");
        let first = Some(BlockTag { block: block.clone(), first: true });
        let second = Some(BlockTag { block: block.clone(), first: false });
        b.conv_bn_relu(&format!("{block}_conv1"), 16, first);
        b.conv_bn(&format!("{block}_conv2"), 16, second);
        b.layers.push(LayerDesc::Add { name: format!("{block}_add"), skip: input.clone() });
        b.layers.push(LayerDesc::Relu { name: format!("{block}_out") });
        b.pool(pool);
        input = pool.to_string();
    }
    b.head(10).finish("resnet-desk", [1, 28, 28])
}
