//! Layer ratios, plan construction, structural surgery and fine-tuning.

mod finetune;
mod plan;
mod report;
mod surgery;

pub use finetune::{finetune, FinetuneResult, TraceConfig, TracePoint, TraceTarget, TransitionTrace};
pub use plan::{
    build_plan_functional, build_plan_l1, build_plan_ranked, build_plan_taylor, compute_layer_ratios, glob_match,
    l1_norms, round_half_up, taylor_scores, ClusterRemoval, Coefficient, LayerCoefficients, LayerPlan, Method,
    Provenance, PruningPlan, MAX_LAYER_RATIO,
};
pub use report::{report, to_csv, write_report, ExperimentRow, COLUMNS};
pub use surgery::{apply_plan, mask_edits};
