//! Full run: train, visualize, cluster, rank, prune, fine-tune, report.
//!
//! Run directory layout:
//!
//! ```text
//! config.json                  resolved run configuration
//! model.ckpt                   baseline
//! patterns/<layer>/filter_NNN.pgm, patterns/patterns.json
//! clusters.json                one ClusterResult per prunable conv
//! indices.json                 contribution indices
//! taylor.json                  Taylor scores
//! plan.json, pruned.ckpt       first configured method
//! plan_<method>.json, pruned_<method>.ckpt, finetuned_<method>.ckpt
//! traces.json                  pattern-transition traces and mean distance per method
//! report.csv, report.json
//! manifest-pipeline.json
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use fprune_core::am::{visualize_layer, AmConfig, FilterPattern, Hook};
use fprune_core::io::write_json_atomic;
use fprune_core::model::checkpoint::{save_checkpoint, Checkpoint, TrainingMeta};
use fprune_core::model::flops::count_flops;
use fprune_core::model::{build_model, evaluate, train, Evaluation, ModelGraph, TrainConfig};
use fprune_core::model::checkpoint::load_checkpoint;
use fprune_core::pruning::{
    apply_plan, build_plan_functional, build_plan_l1, build_plan_ranked, compute_layer_ratios, finetune, report,
    write_report, ExperimentRow, Method, Provenance, PruningPlan, TraceConfig, TraceTarget,
};
use fprune_core::redundancy::{gradient_statistics, select_k_and_lock, ClusterResult, ContributionTable};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::patterns::write_patterns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePointRecord {
    pub iteration: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub method: Method,
    pub layer: String,
    pub filter: usize,
    pub points: Vec<TracePointRecord>,
}

/// Contents of traces.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub interval: usize,
    /// Mean distance-to-initial over every traced filter and point.
    pub mean_distance: BTreeMap<String, f64>,
    pub traces: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub plan: PruningPlan,
    pub prune_eval: Evaluation,
    pub retrain_eval: Evaluation,
    pub row: ExperimentRow,
    /// Mean over traced filters and trace points.
    pub mean_trace_distance: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub baseline: Evaluation,
    pub clusters: Vec<ClusterResult>,
    pub methods: Vec<MethodOutcome>,
    pub traces: Vec<TraceRecord>,
}

impl PipelineOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

fn note(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("[pipeline] {}", msg.as_ref());
    }
}

pub fn am_config(cfg: &RunConfig) -> AmConfig {
    AmConfig { seed: cfg.prune_seed, ..cfg.am.clone() }
}

pub fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        seed: cfg.prune_seed,
        config_hashes: BTreeMap::from([
            ("run".to_string(), cfg.hash()),
            ("am".to_string(), am_config(cfg).hash()),
            ("kmeans".to_string(), fprune_core::io::config_hash(&cfg.kmeans)),
        ]),
    }
}

/// Build the plan for `method` from precomputed clusters and score tables.
pub fn plan_for(
    method: Method,
    model: &ModelGraph,
    ratios: &BTreeMap<String, f64>,
    clusters: &[ClusterResult],
    indices: &[ContributionTable],
    taylor: &[ContributionTable],
) -> fprune_core::Result<PruningPlan> {
    match method {
        Method::Functional => build_plan_functional(clusters, indices, ratios),
        Method::L1 => build_plan_l1(model, ratios),
        Method::Taylor => build_plan_ranked(Method::Taylor, taylor, ratios),
    }
}

/// Lowest original filter indices of `layer` that survive every plan.
pub fn common_survivors(model: &ModelGraph, layer: &str, plans: &[&PruningPlan], count: usize) -> Vec<usize> {
    let n = model.conv(layer).map(|c| c.out_channels).unwrap_or(0);
    (0..n)
        .filter(|f| plans.iter().all(|p| p.layer(layer).is_none_or(|l| !l.remove.contains(f))))
        .take(count)
        .collect()
}

/// First prunable conv with `count` filters surviving every plan, else the
/// one with the most common survivors.
pub fn default_trace_layer(model: &ModelGraph, layers: &[String], plans: &[&PruningPlan], count: usize) -> String {
    let survivors = |l: &String| common_survivors(model, l, plans, count).len();
    layers
        .iter()
        .find(|l| survivors(l) >= count)
        .or_else(|| layers.iter().rev().max_by_key(|l| survivors(l)))
        .cloned()
        .unwrap_or_default()
}

pub fn run_pipeline(cfg: &RunConfig, quiet: bool) -> anyhow::Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    write_json_atomic(&dir.join("config.json"), cfg)?;
    let mut manifest = Manifest::new("pipeline", cfg);
    manifest.config_hash = cfg.hash();

    let data = cfg.data.load()?;
    for f in &data.files {
        manifest.input(f)?;
    }
    note(quiet, format!("data: {} train, {} test", data.train.len(), data.test.len()));

    // (1) baseline
    let model_path = dir.join("model.ckpt");
    let baseline_model = match &cfg.baseline_checkpoint {
        Some(p) => {
            manifest.input(p)?;
            let ck = load_checkpoint(p)?;
            save_checkpoint(&ck, &model_path)?;
            ck.model
        }
        None => {
            let mut m = build_model(&cfg.architecture, cfg.seed)?;
            let tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
            let curve = train(&mut m, &data.train, &tcfg)?;
            for e in &curve {
                note(quiet, format!("train epoch {}: loss {:.4}, acc {:.4}", e.epoch, e.loss, e.accuracy));
            }
            let ck = Checkpoint {
                training: TrainingMeta { epoch: tcfg.epochs, seed: cfg.seed, iteration: 0 },
                ..Checkpoint::new(m)
            };
            save_checkpoint(&ck, &model_path)?;
            ck.model
        }
    };
    let baseline = evaluate(&baseline_model, &data.test)?;
    note(quiet, format!("baseline test accuracy {:.4}", baseline.accuracy));

    // (2) functionality patterns
    let layers = baseline_model.prunable_convs();
    let am = am_config(cfg);
    let mut patterns: Vec<FilterPattern> = Vec::new();
    for layer in &layers {
        patterns.extend(visualize_layer(&baseline_model, layer, &am)?);
    }
    write_patterns(&dir.join("patterns"), &patterns)?;
    note(quiet, format!("synthesized {} patterns", patterns.len()));

    // (3) clusters and contribution indices
    let mut clusters = Vec::with_capacity(layers.len());
    for layer in &layers {
        let ps: Vec<FilterPattern> = patterns.iter().filter(|p| &p.layer == layer).cloned().collect();
        let cr = select_k_and_lock(&ps, cfg.theta, cfg.prune_seed, &cfg.kmeans)?;
        note(quiet, format!("{layer}: K = {}, clustered ratio {:.3}", cr.k, cr.clustered_ratio));
        clusters.push(cr);
    }
    write_json_atomic(&dir.join("clusters.json"), &clusters)?;
    let score_set = match cfg.score_samples {
        Some(n) => data.train.head(n),
        None => data.train.clone(),
    };
    let stats = gradient_statistics(&baseline_model, &score_set, &layers, Hook::PostActivation, 64)?;
    let indices: Vec<ContributionTable> = stats.iter().map(|s| s.contribution.clone()).collect();
    let taylor: Vec<ContributionTable> = stats.into_iter().map(|s| s.taylor).collect();
    write_json_atomic(&dir.join("indices.json"), &indices)?;
    write_json_atomic(&dir.join("taylor.json"), &taylor)?;

    // (4) plans and surgery
    let coeffs = cfg.coefficients.resolve()?;
    let all_ratios = compute_layer_ratios(cfg.global_ratio, &coeffs, &baseline_model)?;
    let ratios: BTreeMap<String, f64> = all_ratios.into_iter().filter(|(l, _)| layers.contains(l)).collect();
    let flops_before = count_flops(&baseline_model).total;
    let mut plans = Vec::new();
    for &method in &cfg.methods {
        let mut plan = plan_for(method, &baseline_model, &ratios, &clusters, &indices, &taylor)?;
        plan.global_ratio = cfg.global_ratio;
        plan.provenance = provenance(cfg);
        write_json_atomic(&dir.join(format!("plan_{}.json", method.as_str())), &plan)?;
        plans.push(plan);
    }
    write_json_atomic(&dir.join("plan.json"), &plans[0])?;

    // (5) fine-tuning with pattern traces
    let plan_refs: Vec<&PruningPlan> = plans.iter().collect();
    let trace_layer = cfg.trace.layer.clone().unwrap_or_else(|| default_trace_layer(&baseline_model, &layers, &plan_refs, cfg.trace.count));
    let trace_filters = if trace_layer.is_empty() {
        Vec::new()
    } else {
        common_survivors(&baseline_model, &trace_layer, &plan_refs, cfg.trace.count)
    };
    let trace_cfg = TraceConfig {
        targets: trace_filters.iter().map(|&f| TraceTarget { layer: trace_layer.clone(), filter: f }).collect(),
        interval: cfg.trace.interval,
        am: am.clone(),
    };
    let ft_cfg = cfg.finetune_config();

    let mut outcomes = Vec::new();
    let mut traces = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let method = plan.method;
        let pruned = apply_plan(&baseline_model, plan)?;
        let ck = Checkpoint { provenance: Some(plan.clone()), ..Checkpoint::new(pruned.clone()) };
        save_checkpoint(&ck, &dir.join(format!("pruned_{}.ckpt", method.as_str())))?;
        if i == 0 {
            save_checkpoint(&ck, &dir.join("pruned.ckpt"))?;
        }
        let prune_eval = evaluate(&pruned, &data.test)?;
        let ft = finetune(&pruned, &data.train, &ft_cfg, &trace_cfg)?;
        let retrain_eval = evaluate(&ft.model, &data.test)?;
        save_checkpoint(
            &Checkpoint {
                training: TrainingMeta { epoch: ft_cfg.epochs, seed: ft_cfg.seed, iteration: 0 },
                provenance: Some(plan.clone()),
                ..Checkpoint::new(ft.model.clone())
            },
            &dir.join(format!("finetuned_{}.ckpt", method.as_str())),
        )?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in &ft.traces {
            for p in &t.points {
                sum += p.distance;
                count += 1;
            }
            traces.push(TraceRecord {
                method,
                layer: t.target.layer.clone(),
                filter: t.target.filter,
                points: t.points.iter().map(|p| TracePointRecord { iteration: p.iteration, distance: p.distance }).collect(),
            });
        }
        let flops_after = count_flops(&pruned).total;
        let row = report(
            &cfg.architecture,
            method,
            cfg.prune_seed,
            &baseline,
            &prune_eval,
            &retrain_eval,
            flops_before,
            flops_after,
        );
        note(
            quiet,
            format!(
                "{}: removed {} filters, FLOPs -{:.2}%, prune acc {:.4}, retrain acc {:.4}",
                method.as_str(),
                plan.total_removed(),
                row.flops_reduction_pct,
                prune_eval.accuracy,
                retrain_eval.accuracy
            ),
        );
        outcomes.push(MethodOutcome {
            method,
            plan: plan.clone(),
            prune_eval,
            retrain_eval,
            row,
            mean_trace_distance: if count == 0 { 0.0 } else { sum / count as f64 },
        });
    }
    let trace_file = TraceFile {
        interval: cfg.trace.interval,
        mean_distance: outcomes.iter().map(|o| (o.method.as_str().to_string(), o.mean_trace_distance)).collect(),
        traces: traces.clone(),
    };
    write_json_atomic(&dir.join("traces.json"), &trace_file)?;
    let rows: Vec<ExperimentRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    write_report(&rows, &dir.join("report.csv"), Some(&dir.join("report.json")))?;

    for name in ["model.ckpt", "clusters.json", "indices.json", "plan.json", "pruned.ckpt", "report.csv", "traces.json"] {
        manifest.output(&dir.join(name))?;
    }
    manifest.write(&dir)?;
    Ok(PipelineOutcome { dir, baseline, clusters, methods: outcomes, traces })
}
