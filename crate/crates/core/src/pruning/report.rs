use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{write_atomic, write_json_atomic};
use crate::model::flops::reduction_pct;
use crate::model::Evaluation;

use super::plan::Method;

pub const COLUMNS: [&str; 8] =
    ["model", "method", "baseline_acc", "flops", "flops_reduction_pct", "prune_acc", "retrain_acc", "seed"];

/// One row of the pruning comparison table. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: String,
    pub method: Method,
    pub baseline_acc: f64,
    /// FLOPs of the pruned model.
    pub flops: u64,
    pub flops_reduction_pct: f64,
    pub prune_acc: f64,
    pub retrain_acc: f64,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn report(
    model: &str,
    method: Method,
    seed: u64,
    baseline: &Evaluation,
    pruned: &Evaluation,
    finetuned: &Evaluation,
    flops_before: u64,
    flops_after: u64,
) -> ExperimentRow {
    ExperimentRow {
        model: model.into(),
        method,
        baseline_acc: baseline.accuracy * 100.0,
        flops: flops_after,
        flops_reduction_pct: reduction_pct(flops_before, flops_after),
        prune_acc: pruned.accuracy * 100.0,
        retrain_acc: finetuned.accuracy * 100.0,
        seed,
    }
}

pub fn to_csv(rows: &[ExperimentRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{},{:.2},{:.2},{:.2},{}\n",
            r.model,
            r.method.as_str(),
            r.baseline_acc,
            r.flops,
            r.flops_reduction_pct,
            r.prune_acc,
            r.retrain_acc,
            r.seed
        ));
    }
    out
}

pub fn write_report(rows: &[ExperimentRow], csv: &Path, json: Option<&Path>) -> Result<()> {
    write_atomic(csv, to_csv(rows).as_bytes())?;
    if let Some(j) = json {
        write_json_atomic(j, &rows)?;
    }
    Ok(())
}
