//! Model construction, training, evaluation, checkpoints and FLOPs.

pub mod checkpoint;
pub mod flops;
mod graph;
pub mod train;
pub mod zoo;

pub use graph::{ArchSpec, BatchNorm, BlockTag, ChannelChain, Conv2d, Dense, Layer, LayerDesc, LayerSpec, ModelGraph};
pub use train::{evaluate, train, Evaluation, LrSchedule, TrainConfig, TrainCurve};
pub use zoo::{arch_by_name, build_model};
