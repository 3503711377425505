//! Checkpoint container.
//!
//! ```text
//! "FOPK" | version: u16 LE | meta_len: u32 LE | meta: UTF-8 JSON | blobs
//! ```
//!
//! `meta` holds the architecture, the tensor index (name, shape, byte
//! offset into `blobs`, CRC32) and training metadata. Blobs are raw 32-bit
//! little-endian reals, concatenated in index order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::train::Sgd;
use crate::model::{ArchSpec, ModelGraph};
use crate::pruning::PruningPlan;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"FOPK";
pub const VERSION: u16 = 1;
const VELOCITY_PREFIX: &str = "optim.velocity/";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    graph: ArchSpec,
    tensors: Vec<TensorEntry>,
    training: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<PruningPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelGraph,
    pub training: TrainingMeta,
    pub optimizer: Option<Sgd>,
    /// Plan that produced this model, for pruned checkpoints.
    pub provenance: Option<PruningPlan>,
}

impl Checkpoint {
    pub fn new(model: ModelGraph) -> Self {
        Self { model, training: TrainingMeta::default(), optimizer: None, provenance: None }
    }
}

fn blob(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut named: Vec<(String, &Tensor)> = ckpt.model.state();
    if let Some(opt) = &ckpt.optimizer {
        for (k, v) in &opt.velocity {
            named.push((format!("{VELOCITY_PREFIX}{k}"), v));
        }
    }
    let mut blobs = Vec::new();
    let mut tensors = Vec::with_capacity(named.len());
    for (name, t) in named {
        let b = blob(t);
        tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset: blobs.len() as u64, crc32: crc32fast::hash(&b) });
        blobs.extend_from_slice(&b);
    }
    let meta = Meta {
        graph: ckpt.model.arch(),
        tensors,
        training: TrainingMeta {
            iteration: ckpt.optimizer.as_ref().map(|o| o.iteration).unwrap_or(ckpt.training.iteration),
            ..ckpt.training.clone()
        },
        provenance: ckpt.provenance.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(10 + json.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing FOPK magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let meta_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let meta_bytes = bytes.get(10..10 + meta_len).ok_or_else(|| Error::format(path, "truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(meta_bytes)?;
    let blobs = &bytes[10 + meta_len..];

    let mut expected_len = 0u64;
    let mut model = ModelGraph::skeleton(&meta.graph)?;
    let mut velocity = std::collections::BTreeMap::new();
    {
        let mut state = model.state_mut();
        for e in &meta.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = blobs
                .get(start..start + 4 * n)
                .ok_or_else(|| Error::format(path, format!("truncated blob for `{}`", e.name)))?;
            if crc32fast::hash(raw) != e.crc32 {
                return Err(Error::Checksum(e.name.clone()));
            }
            expected_len = expected_len.max(e.offset + 4 * n as u64);
            let data: Vec<Scalar> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as Scalar)
                .collect();
            let t = Tensor::new(e.shape.clone(), data)?;
            if let Some(param) = e.name.strip_prefix(VELOCITY_PREFIX) {
                velocity.insert(param.to_string(), t);
                continue;
            }
            let slot = state
                .get_mut(&e.name)
                .ok_or_else(|| Error::format(path, format!("unexpected tensor `{}`", e.name)))?;
            if slot.shape() != t.shape() {
                return Err(Error::format(path, format!("tensor `{}` has shape {:?}, graph expects {:?}", e.name, t.shape(), slot.shape())));
            }
            **slot = t;
        }
        if state.len() + velocity.len() != meta.tensors.len() {
            return Err(Error::format(path, "tensor index does not cover the model state"));
        }
    }
    if expected_len != blobs.len() as u64 {
        return Err(Error::format(path, format!("blob section is {} bytes, index describes {expected_len}", blobs.len())));
    }
    let optimizer = (!velocity.is_empty()).then(|| Sgd { velocity, iteration: meta.training.iteration });
    Ok(Checkpoint { model, training: meta.training, optimizer, provenance: meta.provenance })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    save_checkpoint(&Checkpoint::new(model.clone()), path)
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    Ok(load_checkpoint(path)?.model)
}
