//! Functional redundancy: pattern clustering, contribution ranking and
//! per-layer sensitivity.

mod contribution;
pub mod kmeans;
mod select;
mod sensitivity;

pub use contribution::{contribution_index, contribution_indices, gradient_statistics, ContributionTable, LayerStatistics, L2_SPATIAL};
pub use kmeans::{kmeans, KMeansParams, KMeansResult};
pub use select::{select_k_and_lock, ClusterResult, GridPoint, LOCKED};
pub use sensitivity::{curves_to_csv, layer_sensitivity, SensitivityCurve, SensitivityInputs, SensitivityPoint};

use crate::am::FilterPattern;
use crate::error::{Error, Result};

/// Pixel-level squared Euclidean distance between two patterns.
pub fn pattern_distance(a: &FilterPattern, b: &FilterPattern) -> Result<f64> {
    if a.pattern.shape() != b.pattern.shape() {
        return Err(Error::Shape(format!(
            "pattern shapes differ: {:?} vs {:?}",
            a.pattern.shape(),
            b.pattern.shape()
        )));
    }
    Ok(a.pattern
        .data()
        .iter()
        .zip(b.pattern.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}
