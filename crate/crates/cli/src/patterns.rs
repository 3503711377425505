use std::path::{Path, PathBuf};

use fprune_core::am::{FilterPattern, PatternSummary};
use fprune_core::data::write_pattern_image;
use fprune_core::io::write_json_atomic;
use fprune_core::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Pattern with its raw pixels, as stored in `patterns.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternRecord {
    #[serde(flatten)]
    pub summary: PatternSummary,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl From<&FilterPattern> for PatternRecord {
    fn from(p: &FilterPattern) -> Self {
        Self {
            summary: p.summary(),
            shape: p.pattern.shape().to_vec(),
            data: p.pattern.data().iter().map(|&v| v as f32).collect(),
        }
    }
}

impl PatternRecord {
    pub fn into_pattern(self) -> anyhow::Result<FilterPattern> {
        let s = self.summary;
        Ok(FilterPattern {
            pattern: Tensor::new(self.shape, self.data.into_iter().map(|v| v as Scalar).collect())?,
            layer: s.layer,
            filter: s.filter,
            activation: s.activation,
            initial_activation: s.initial_activation,
            steps: s.steps,
            step_size: s.step_size,
            dead: s.dead,
            config_hash: s.config_hash,
        })
    }
}

/// Write one image per pattern under `dir/<layer>/` and all raw pixels to
/// `dir/patterns.json`. Returns the JSON path.
pub fn write_patterns(dir: &Path, patterns: &[FilterPattern]) -> anyhow::Result<PathBuf> {
    for p in patterns {
        let ext = if p.pattern.shape()[0] == 3 { "ppm" } else { "pgm" };
        write_pattern_image(&p.pattern, &dir.join(&p.layer).join(format!("filter_{:03}.{ext}", p.filter)))?;
    }
    let records: Vec<PatternRecord> = patterns.iter().map(PatternRecord::from).collect();
    let path = dir.join("patterns.json");
    write_json_atomic(&path, &records)?;
    Ok(path)
}

pub fn read_patterns(path: &Path) -> anyhow::Result<Vec<FilterPattern>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Invalid(format!("{}: {e}", path.display())))?;
    let records: Vec<PatternRecord> = serde_json::from_str(&text)?;
    records.into_iter().map(PatternRecord::into_pattern).collect()
}

/// Group patterns by layer, keeping first-appearance order.
pub fn by_layer(patterns: Vec<FilterPattern>) -> Vec<(String, Vec<FilterPattern>)> {
    let mut out: Vec<(String, Vec<FilterPattern>)> = Vec::new();
    for p in patterns {
        match out.iter_mut().find(|(l, _)| *l == p.layer) {
            Some((_, v)) => v.push(p),
            None => out.push((p.layer.clone(), vec![p])),
        }
    }
    out
}
