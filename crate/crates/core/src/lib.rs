//! Functionality-oriented filter pruning.
//!
//! Pipeline: train a CNN, synthesize each filter's activation-maximization
//! pattern, cluster patterns per layer, rank filters inside each cluster by
//! their gradient contribution, remove the lowest-ranked filters in
//! proportion to cluster size and fine-tune.

pub mod am;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod io;
pub mod model;
pub mod par;
pub mod pruning;
pub mod redundancy;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
