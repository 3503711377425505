use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fprune_core::am::{visualize_filters, AmConfig, FilterPattern, Hook};
use fprune_core::data::LabeledDataset;
use fprune_core::io::{write_atomic, write_json_atomic};
use fprune_core::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use fprune_core::model::flops::count_flops;
use fprune_core::model::{build_model, evaluate, train, LrSchedule, ModelGraph, TrainConfig};
use fprune_core::pruning::{
    apply_plan, compute_layer_ratios, finetune, report, write_report, Method, TraceConfig, TraceTarget,
};
use fprune_core::redundancy::{
    curves_to_csv, gradient_statistics, layer_sensitivity, select_k_and_lock, ClusterResult, ContributionTable,
    KMeansParams, SensitivityInputs,
};
use serde::Serialize;

use crate::config::{CoefficientSpec, DataConfig, DatasetKind, RunConfig};
use crate::manifest::{dir_of, Manifest};
use crate::patterns::{by_layer, read_patterns, write_patterns};
use crate::pipeline::{run_pipeline, TraceRecord, TracePointRecord};
use crate::Invalid;

#[derive(Debug, Parser)]
#[command(name = "fprune", version, about = "Functionality-oriented convolutional filter pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Report test (or train) accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Synthesize activation-maximization patterns.
    Am(AmArgs),
    /// Cluster patterns per layer with grid-searched K.
    Cluster(ClusterArgs),
    /// Rank filters by contribution index or Taylor score.
    Rank(RankArgs),
    /// Per-layer accuracy after pruning that layer alone.
    Sensitivity(SensitivityArgs),
    /// Build a pruning plan and apply it.
    Prune(PruneArgs),
    /// Fine-tune a (pruned) model, tracing filter patterns.
    Finetune(FinetuneArgs),
    /// Print the FLOPs of a checkpoint.
    Flops(FlopsArgs),
    /// Write a comparison row for baseline, pruned and fine-tuned models.
    Report(ReportArgs),
    /// Run every stage from a JSON configuration.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_parser = parse_dataset, default_value = "mnist")]
    pub dataset: DatasetKind,
    /// Dataset directory (default: $FPRUNE_DATA/<dataset> or data/<dataset>).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
}

impl DataArgs {
    fn config(&self) -> DataConfig {
        DataConfig {
            kind: self.dataset,
            root: self.data_root.clone(),
            train_limit: self.train_limit,
            test_limit: self.test_limit,
        }
    }
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    match s {
        "mnist" => Ok(DatasetKind::Mnist),
        "cifar10" => Ok(DatasetKind::Cifar10),
        _ => Err(format!("unknown dataset `{s}` (mnist, cifar10)")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fprune_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "convnet-desk")]
    pub arch: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Debug, Args)]
pub struct AmArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Conv layers to visualize (default: every prunable conv).
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Filter indices (default: all).
    #[arg(long, value_delimiter = ',')]
    pub filters: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// `patterns.json` written by `am`.
    #[arg(long)]
    pub patterns: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    pub theta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Number of training images to score with (default: all).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Write Taylor scores instead of contribution indices.
    #[arg(long)]
    pub taylor: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9])]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Contribution indices (functional) or Taylor scores (taylor).
    #[arg(long)]
    pub indices: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Global ratio R.
    #[arg(long)]
    pub ratio: f64,
    /// `uniform`, `cifar`, `imagenet` or a JSON file of {pattern, coefficient}.
    #[arg(long, default_value = "uniform")]
    pub coefficients: String,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub indices: Option<PathBuf>,
    /// Needed for Taylor scores when `--indices` is absent.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `layer:filter` (original filter index); repeatable.
    #[arg(long = "trace", value_parser = parse_trace)]
    pub traces: Vec<TraceTarget>,
    #[arg(long, default_value_t = 100)]
    pub trace_interval: usize,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_trace(s: &str) -> Result<TraceTarget, String> {
    let (layer, filter) = s.rsplit_once(':').ok_or_else(|| format!("expected layer:filter, got `{s}`"))?;
    let filter = filter.parse().map_err(|_| format!("bad filter index in `{s}`"))?;
    Ok(TraceTarget { layer: layer.into(), filter })
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub pruned: PathBuf,
    #[arg(long)]
    pub finetuned: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Taken from the pruned checkpoint's plan when omitted.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `prune_seed`.
    #[arg(long)]
    pub prune_seed: Option<u64>,
    /// Overrides `global_ratio`.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub quiet: bool,
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Am(a) => cmd_am(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Report(a) => cmd_report(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(Invalid(format!("{} does not exist", path.display())).into());
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Checkpoint> {
    require_file(path)?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn layers_or_prunable(model: &ModelGraph, layers: &[String]) -> Vec<String> {
    if layers.is_empty() {
        model.prunable_convs()
    } else {
        layers.to_vec()
    }
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    arch: &'a str,
    data: DataConfig,
    train: &'a TrainConfig,
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: LrSchedule::Constant { lr: a.lr },
        seed: a.seed,
        augment: a.augment,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Invalid(e.to_string()))?;
    let mut model = build_model(&a.arch, a.seed).map_err(|e| Invalid(e.to_string()))?;
    let data = a.data.config().load()?;
    let curve = train(&mut model, &data.train, &cfg)?;
    for e in &curve {
        println!("epoch {}: loss {:.4}, train accuracy {:.4}", e.epoch, e.loss, e.accuracy);
    }
    let eval = evaluate(&model, &data.test)?;
    println!("test accuracy {:.4}", eval.accuracy);
    let ck = Checkpoint { training: TrainingMeta { epoch: cfg.epochs, seed: a.seed, iteration: 0 }, ..Checkpoint::new(model) };
    save_checkpoint(&ck, &a.out)?;
    let mut m = Manifest::new("train", &TrainRecord { arch: &a.arch, data: a.data.config(), train: &cfg });
    for f in &data.files {
        m.input(f)?;
    }
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn split<'a>(d: &'a crate::config::Datasets, train: bool) -> &'a LabeledDataset {
    if train {
        &d.train
    } else {
        &d.test
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let data = a.data.config().load()?;
    let e = evaluate(&ck.model, split(&data, a.train_split))?;
    println!("{}", serde_json::to_string_pretty(&e)?);
    Ok(())
}

fn cmd_am(a: AmArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let cfg = AmConfig { steps: a.steps, step_size: a.step_size, seed: a.seed, ..AmConfig::default() };
    cfg.validate().map_err(|e| Invalid(e.to_string()))?;
    let mut all: Vec<FilterPattern> = Vec::new();
    for layer in layers_or_prunable(&ck.model, &a.layers) {
        let n = ck.model.conv(&layer).map_err(|e| Invalid(e.to_string()))?.out_channels;
        let filters: Vec<usize> = if a.filters.is_empty() { (0..n).collect() } else { a.filters.clone() };
        if let Some(&f) = filters.iter().find(|&&f| f >= n) {
            return Err(Invalid(format!("filter {f} out of range for `{layer}` ({n} filters)")).into());
        }
        all.extend(visualize_filters(&ck.model, &layer, &filters, &cfg)?);
    }
    let json = write_patterns(&a.out, &all)?;
    println!("wrote {} patterns to {}", all.len(), a.out.display());
    let mut m = Manifest::new("am", &cfg);
    m.input(&a.model)?;
    m.output(&json)?;
    m.write(&a.out)?;
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> anyhow::Result<()> {
    let patterns = read_patterns(&a.patterns)?;
    let params = KMeansParams::default();
    let mut results = Vec::new();
    for (layer, ps) in by_layer(patterns) {
        let r = select_k_and_lock(&ps, a.theta, a.seed, &params).map_err(|e| Invalid(e.to_string()))?;
        println!("{layer}: K = {}, clustered {:.3}, locked {}", r.k, r.clustered_ratio, r.locked().len());
        results.push(r);
    }
    write_json_atomic(&a.out, &results)?;
    let mut m = Manifest::new("cluster", &(a.theta, a.seed, &params));
    m.input(&a.patterns)?;
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn score_tables(
    model: &ModelGraph,
    data: &LabeledDataset,
    layers: &[String],
    batch: usize,
) -> anyhow::Result<(Vec<ContributionTable>, Vec<ContributionTable>)> {
    let stats = gradient_statistics(model, data, layers, Hook::PostActivation, batch)?;
    Ok(stats.into_iter().map(|s| (s.contribution, s.taylor)).unzip())
}

fn cmd_rank(a: RankArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let data = a.data.config().load()?;
    let set = match a.samples {
        Some(n) => data.train.head(n),
        None => data.train.clone(),
    };
    let layers = layers_or_prunable(&ck.model, &a.layers);
    let (contrib, taylor) = score_tables(&ck.model, &set, &layers, a.batch_size.max(1))?;
    let tables = if a.taylor { taylor } else { contrib };
    for t in &tables {
        let order = t.ascending();
        println!("{}: lowest {:?}", t.layer, &order[..order.len().min(5)]);
    }
    write_json_atomic(&a.out, &tables)?;
    let mut m = Manifest::new("rank", &(a.samples, a.taylor, &layers));
    m.input(&a.model)?;
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let data = a.data.config().load()?;
    let mut inputs = SensitivityInputs::default();
    if a.method == Method::Functional {
        let c = a.clusters.as_ref().ok_or_else(|| Invalid("functional sensitivity needs --clusters".into()))?;
        inputs.clusters = read_json(c)?;
    }
    if a.method != Method::L1 {
        let i = a.indices.as_ref().ok_or_else(|| Invalid("this method needs --indices".into()))?;
        inputs.scores = read_json(i)?;
    }
    let curves = layer_sensitivity(&ck.model, &data.test, &a.ratios, a.method, &inputs)?;
    write_atomic(&a.out, curves_to_csv(&curves).as_bytes())?;
    print!("{}", curves_to_csv(&curves));
    let mut m = Manifest::new("sensitivity", &(a.method, &a.ratios));
    m.input(&a.model)?;
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn resolve_coefficients(spec: &str) -> anyhow::Result<fprune_core::pruning::LayerCoefficients> {
    let p = Path::new(spec);
    let cs = if p.extension().is_some_and(|e| e == "json") {
        CoefficientSpec::Explicit(read_json(p)?)
    } else {
        CoefficientSpec::Preset(spec.into())
    };
    Ok(cs.resolve()?)
}

fn cmd_prune(a: PruneArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let model = &ck.model;
    let coeffs = resolve_coefficients(&a.coefficients)?;
    let ratios: BTreeMap<String, f64> = compute_layer_ratios(a.ratio, &coeffs, model)
        .map_err(|e| Invalid(e.to_string()))?
        .into_iter()
        .filter(|(l, _)| model.prunable_convs().contains(l))
        .collect();
    let mut m = Manifest::new("prune", &(a.method, a.ratio, &coeffs, a.seed));
    m.input(&a.model)?;
    let clusters: Vec<ClusterResult> = match &a.clusters {
        Some(p) => {
            m.input(p)?;
            read_json(p)?
        }
        None if a.method == Method::Functional => return Err(Invalid("functional pruning needs --clusters".into()).into()),
        None => Vec::new(),
    };
    let indices: Vec<ContributionTable> = match &a.indices {
        Some(p) => {
            m.input(p)?;
            read_json(p)?
        }
        None if a.method == Method::Functional => return Err(Invalid("functional pruning needs --indices".into()).into()),
        None if a.method == Method::Taylor => {
            let data = a.data.config().load()?;
            let layers: Vec<String> = ratios.keys().cloned().collect();
            score_tables(model, &data.train, &layers, 64)?.1
        }
        None => Vec::new(),
    };
    let mut plan = crate::pipeline::plan_for(a.method, model, &ratios, &clusters, &indices, &indices)?;
    plan.global_ratio = a.ratio;
    plan.provenance.seed = a.seed;
    plan.provenance.config_hashes.insert("prune".into(), m.config_hash.clone());
    let pruned = apply_plan(model, &plan)?;
    write_json_atomic(&a.plan, &plan)?;
    save_checkpoint(&Checkpoint { provenance: Some(plan.clone()), ..Checkpoint::new(pruned) }, &a.out)?;
    println!("removed {} filters", plan.total_removed());
    m.output(&a.plan)?;
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let data = a.data.config().load()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: LrSchedule::Constant { lr: a.lr },
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Invalid(e.to_string()))?;
    let trace = TraceConfig { targets: a.traces.clone(), interval: a.trace_interval, am: AmConfig { seed: a.seed, ..AmConfig::default() } };
    let r = finetune(&ck.model, &data.train, &cfg, &trace)?;
    for e in &r.curve {
        println!("epoch {}: loss {:.4}, train accuracy {:.4}", e.epoch, e.loss, e.accuracy);
    }
    println!("test accuracy {:.4}", evaluate(&r.model, &data.test)?.accuracy);
    save_checkpoint(
        &Checkpoint {
            training: TrainingMeta { epoch: cfg.epochs, seed: cfg.seed, iteration: 0 },
            provenance: ck.provenance.clone(),
            ..Checkpoint::new(r.model)
        },
        &a.out,
    )?;
    let mut m = Manifest::new("finetune", &(&cfg, &trace));
    m.input(&a.model)?;
    m.output(&a.out)?;
    if let Some(t) = &a.trace_out {
        let method = ck.provenance.as_ref().map(|p| p.method).unwrap_or(Method::Functional);
        let records: Vec<TraceRecord> = r
            .traces
            .iter()
            .map(|t| TraceRecord {
                method,
                layer: t.target.layer.clone(),
                filter: t.target.filter,
                points: t.points.iter().map(|p| TracePointRecord { iteration: p.iteration, distance: p.distance }).collect(),
            })
            .collect();
        write_json_atomic(t, &records)?;
        m.output(t)?;
    }
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> anyhow::Result<()> {
    let ck = load_model(&a.model)?;
    let r = count_flops(&ck.model);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("{:<16} {:<10} {:>14}", "layer", "kind", "flops");
    for l in &r.per_layer {
        println!("{:<16} {:<10} {:>14}", l.name, l.kind, l.flops);
    }
    println!("{:<16} {:<10} {:>14}", "total", "", r.total);
    println!("convention: {}", r.convention);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let base = load_model(&a.baseline)?;
    let pruned = load_model(&a.pruned)?;
    let tuned = load_model(&a.finetuned)?;
    let method = a
        .method
        .or(pruned.provenance.as_ref().map(|p| p.method))
        .ok_or_else(|| Invalid("--method is required when the pruned checkpoint has no plan".into()))?;
    let data = a.data.config().load()?;
    let row = report(
        &base.model.name,
        method,
        a.seed,
        &evaluate(&base.model, &data.test)?,
        &evaluate(&pruned.model, &data.test)?,
        &evaluate(&tuned.model, &data.test)?,
        count_flops(&base.model).total,
        count_flops(&pruned.model).total,
    );
    let json = a.out.with_extension("json");
    write_report(std::slice::from_ref(&row), &a.out, Some(&json))?;
    print!("{}", fprune_core::pruning::to_csv(std::slice::from_ref(&row)));
    let mut m = Manifest::new("report", &(method, a.seed));
    for p in [&a.baseline, &a.pruned, &a.finetuned] {
        m.input(p)?;
    }
    m.output(&a.out)?;
    m.write(&dir_of(&a.out))?;
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> anyhow::Result<()> {
    require_file(&a.config)?;
    let mut cfg = RunConfig::from_file(&a.config)?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if let Some(s) = a.prune_seed {
        cfg.prune_seed = s;
    }
    if let Some(r) = a.ratio {
        cfg.global_ratio = r;
    }
    let out = run_pipeline(&cfg, a.quiet)?;
    print!("{}", std::fs::read_to_string(out.dir.join("report.csv"))?);
    Ok(())
}
