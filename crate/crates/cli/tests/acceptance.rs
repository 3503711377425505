//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.
//!
//! `cargo test -p fprune-cli --test acceptance`; pass criterion numbers as
//! arguments to run a subset (7, 8 and 9 share one set of pipeline runs).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use fprune_cli::config::RunConfig;
use fprune_cli::pipeline::{run_pipeline, PipelineOutcome};
use fprune_core::autodiff::gradcheck::{finite_difference_check, GradCheckConfig, Objective};
use fprune_core::autodiff::Mode;
use fprune_core::data::{load_cifar10, load_mnist};
use fprune_core::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use fprune_core::model::flops::{count_flops, reduction_pct};
use fprune_core::model::{build_model, ArchSpec, LayerDesc, ModelGraph};
use fprune_core::pruning::{
    apply_plan, build_plan_functional, build_plan_l1, compute_layer_ratios, round_half_up, LayerCoefficients, Method,
};
use fprune_core::redundancy::{
    contribution_index, contribution_indices, gradient_statistics, kmeans, select_k_and_lock, KMeansParams, LOCKED,
};
use fprune_core::am::{FilterPattern, Hook};
use fprune_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn wide() -> bool {
    std::mem::size_of::<Scalar>() == 8
}

// ---------------------------------------------------------------- 1

fn conv(name: &str, out: usize, kernel: usize, stride: usize, padding: usize) -> LayerDesc {
    LayerDesc::Conv { name: name.into(), out, kernel, stride, padding, block: None, filter_origin: None }
}

fn small(input: [usize; 3], mut layers: Vec<LayerDesc>) -> ModelGraph {
    layers.push(LayerDesc::Flatten { name: "flatten".into() });
    layers.push(LayerDesc::Dense { name: "fc".into(), out: 3 });
    ModelGraph::from_arch(&ArchSpec { name: "t".into(), input_shape: input, layers }, 5).unwrap()
}

fn gradients() -> Check {
    let (tol, eps) = if wide() { (1e-5, 1e-5) } else { (1e-2, 1e-3) };
    let mut bn = small([1, 4, 4], vec![conv("conv", 3, 3, 1, 1), LayerDesc::Batchnorm { name: "bn".into() }]);
    randomize_batchnorm(&mut bn, 2);
    let cases: Vec<(&str, ModelGraph, Mode)> = vec![
        ("conv", small([2, 5, 5], vec![conv("conv", 3, 3, 2, 1)]), Mode::Train),
        ("batchnorm/train", bn.clone(), Mode::Train),
        ("batchnorm/eval", bn, Mode::Eval),
        ("relu", small([1, 5, 5], vec![conv("conv", 4, 3, 1, 1), LayerDesc::Relu { name: "relu".into() }]), Mode::Train),
        (
            "maxpool",
            small([1, 6, 6], vec![conv("conv", 2, 3, 1, 1), LayerDesc::Maxpool { name: "pool".into(), size: 2, stride: 2 }]),
            Mode::Train,
        ),
        ("dense+softmax-ce", small([2, 3, 3], vec![]), Mode::Train),
        (
            "residual add",
            small(
                [2, 4, 4],
                vec![
                    conv("conv1", 3, 3, 1, 1),
                    LayerDesc::Relu { name: "relu1".into() },
                    conv("conv2", 3, 3, 1, 1),
                    LayerDesc::Add { name: "add".into(), skip: "relu1".into() },
                ],
            ),
            Mode::Train,
        ),
    ];
    let mut worst = 0.0f64;
    for (name, m, mode) in &cases {
        let [c, h, w] = m.input_shape;
        let x = random_tensor(&[3, c, h, w], 17, -1.0, 1.0);
        let cfg = GradCheckConfig { epsilon: eps, samples: 60, mode: *mode, check_input: true, seed: 3, ..Default::default() };
        let r = finite_difference_check(m, &x, &Objective::CrossEntropy(vec![0, 2, 1]), &cfg).map_err(|e| e.to_string())?;
        ensure(r.checked > 0 && r.max_relative < tol, || format!("{name}: max relative error {}", r.max_relative))?;
        worst = worst.max(r.max_relative);
    }
    let m = build_model("convnet-desk", 7).unwrap();
    let x = random_tensor(&[4, 1, 28, 28], 9, 0.0, 1.0);
    let cfg = GradCheckConfig { epsilon: eps, samples: 30, seed: 11, ..Default::default() };
    let r = finite_difference_check(&m, &x, &Objective::CrossEntropy(vec![3, 1, 4, 1]), &cfg).map_err(|e| e.to_string())?;
    ensure(r.max_relative < tol, || format!("desk convnet: max relative error {}", r.max_relative))?;
    worst = worst.max(r.max_relative);
    Ok(format!("{} layer cases + desk convnet, max relative error {worst:.2e} < {tol:.0e}", cases.len()))
}

// ---------------------------------------------------------------- 2

fn mask_equivalence() -> Check {
    let mut model = build_model("convnet-desk", 12).unwrap();
    randomize_batchnorm(&mut model, 3);
    let x = random_tensor(&[4, 1, 28, 28], 5, 0.0, 1.0);
    let methods = [Method::Functional, Method::L1, Method::Taylor];
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let plan = random_plan(&model, methods[i as usize % 3], 1000 + i);
        ensure(!plan.is_empty(), || format!("plan {i} is empty"))?;
        let gap = mask_gap(&model, &plan, &x);
        ensure(gap <= 1e-5, || format!("plan {i} ({}): gap {gap:.2e}", plan.method.as_str()))?;
        worst = worst.max(gap);
    }
    Ok(format!("20 plans, max |pruned - masked| = {worst:.2e} <= 1e-5"))
}

// ---------------------------------------------------------------- 3

fn kmeans_suite() -> Check {
    let params = KMeansParams::default();
    for seed in 0..10 {
        let pts = random_points(40, 5, seed);
        for k in [2, 3, 7] {
            let r = kmeans(&pts, k, seed, &params).map_err(|e| e.to_string())?;
            ensure(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()), || {
                format!("objective rose: seed {seed} k {k}")
            })?;
        }
    }
    let pts = random_points(13, 4, 2);
    let r = kmeans(&pts, 1, 0, &params).unwrap();
    ensure((r.objective - wcss(&pts, &r.assignment, 1)).abs() < 1e-12, || "K = 1 is not the mean".into())?;
    let pts = random_points(9, 3, 4);
    let r = kmeans(&pts, 9, 1, &params).unwrap();
    ensure(r.objective == 0.0, || format!("K = N objective {}", r.objective))?;

    let (pts, outliers) = planted();
    let patterns: Vec<FilterPattern> = pts.iter().enumerate().map(|(i, p)| pattern(i, p)).collect();
    let r = select_k_and_lock(&patterns, 0.85, 1, &params).map_err(|e| e.to_string())?;
    ensure(r.k == 3 && r.locked() == outliers, || format!("planted: K = {}, locked {:?}", r.k, r.locked()))?;

    let mut cases = 0;
    for seed in 0..15 {
        for n in 3..=8 {
            for k in 1..=n.min(4) {
                let pts = grouped_points(n, k, 100 + seed * 10 + n as u64);
                let oracle = brute_force(&pts, k);
                let r = kmeans(&pts, k, seed, &params).unwrap();
                ensure((r.objective - oracle).abs() <= 1e-9 * oracle.max(1e-12), || {
                    format!("n {n} k {k}: {} vs exhaustive {oracle}", r.objective)
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!("monotone, degenerate K exact, planted K = 3 with 2 locked, {cases} exhaustive cases agree"))
}

// ---------------------------------------------------------------- 4

fn contribution_suite() -> Check {
    let mut m = build_model("convnet-desk", 4).unwrap();
    let idx = m.index_of("conv2").unwrap();
    if let fprune_core::model::Layer::Conv2d(next) = &mut m.layers[idx].layer {
        let (cin, k) = (next.in_channels, next.kernel);
        for o in 0..next.out_channels {
            for t in 0..k * k {
                next.weight.data_mut()[(o * cin + 5) * k * k + t] = 0.0;
            }
        }
    }
    let t = contribution_index(&m, &random_dataset(6, [1, 28, 28], 10, 1), "conv1").unwrap();
    ensure(t.values[5] == 0.0, || format!("dead filter scored {}", t.values[5]))?;

    let (m, data, contribution, taylor) = one_filter_case();
    let s = gradient_statistics(&m, &data, &["conv".to_string()], Hook::PostActivation, 2).unwrap().remove(0);
    let got = s.contribution.values[0];
    ensure((got - contribution).abs() <= 1e-6 * contribution, || format!("symbolic oracle {got} vs {contribution}"))?;
    let got = s.taylor.values[0];
    ensure((got - taylor).abs() <= 1e-5 * taylor.max(1e-9), || format!("taylor oracle {got} vs {taylor}"))?;

    let m = build_model("convnet-desk", 2).unwrap();
    let (actual, predicted) = linearization(&m, &mnist_test().head(16), "conv2", 1e-3);
    let lin = (actual - predicted).abs() / predicted.abs();
    ensure(lin <= 0.1, || format!("loss delta {actual} vs linear {predicted}"))?;

    let m = build_model("convnet-desk", 9).unwrap();
    let data = mnist_test().head(40);
    let layers = m.conv_names();
    let a = contribution_indices(&m, &data, &layers, 1).unwrap();
    let mut worst = 0.0f64;
    for batch in [7, 32] {
        let b = contribution_indices(&m, &data, &layers, batch).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.values.iter().zip(&y.values) {
                worst = worst.max((u - v).abs() / u.abs().max(1e-12));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("batch partition relative gap {worst:.2e}"))?;
    Ok(format!("dead = 0, oracle exact, linearization error {:.1}%, batch gap {worst:.1e}", lin * 100.0))
}

// ---------------------------------------------------------------- 5

fn balanced_pruning() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cr = clusters("conv1", &[10, 5, 3], 2, &mut rng);
    let mut ratios = BTreeMap::new();
    ratios.insert("conv1".to_string(), 0.3);
    let plan = build_plan_functional(&[cr], &[table("conv1", (0..20).map(|i| i as f64).collect())], &ratios).unwrap();
    let removed: Vec<usize> = plan.layers[0].clusters.as_ref().unwrap().iter().map(|c| c.removed).collect();
    ensure(removed == [3, 2, 1, 0], || format!("reference case removed {removed:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let sizes: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(1..12)).collect();
        let locked = rng.random_range(0..6);
        let ratio = rng.random_range(0.0..0.95);
        let cr = clusters("conv", &sizes, locked, &mut rng);
        let values: Vec<f64> = (0..cr.filters.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut ratios = BTreeMap::new();
        ratios.insert("conv".to_string(), ratio);
        let plan = build_plan_functional(&[cr.clone()], &[table("conv", values)], &ratios).unwrap();
        let remove = &plan.layers[0].remove;
        ensure(remove.iter().all(|&f| cr.assignment[f] != LOCKED), || format!("case {case}: locked filter removed"))?;
        for (c, &s) in sizes.iter().enumerate() {
            let gone = cr.members(c as i64).iter().filter(|f| remove.contains(f)).count();
            ensure(gone < s && gone == round_half_up(ratio * s as f64).min(s - 1), || {
                format!("case {case}: cluster of {s} lost {gone}")
            })?;
        }
    }
    Ok("reference case [3, 2, 1, 0], 200 random configurations keep every cluster and the locked set".into())
}

// ---------------------------------------------------------------- 6

fn flops_accounting() -> Check {
    for seed in 0..5 {
        let arch = random_arch(seed);
        let got = count_flops(&ModelGraph::skeleton(&arch).unwrap()).total;
        let want = loop_count(&arch);
        ensure(got == want, || format!("random arch {seed}: {got} vs loop {want}"))?;
    }
    let m = build_model("convnet-desk", 3).unwrap();
    let before = count_flops(&m).total;
    let ratios = compute_layer_ratios(0.4, &LayerCoefficients::uniform(1.0), &m).unwrap();
    let after = count_flops(&apply_plan(&m, &build_plan_l1(&m, &ratios).unwrap()).unwrap()).total;
    let (full, kept) = (desk_closed_form([8, 16, 16, 32]), desk_closed_form([5, 10, 10, 19]));
    ensure(before == full && after == kept, || format!("closed form {full}/{kept} vs {before}/{after}"))?;
    let pct = reduction_pct(before, after);
    ensure(pct == (1.0 - kept as f64 / full as f64) * 100.0, || format!("reduction {pct}"))?;
    Ok(format!("5 random architectures exact, 40% uniform plan FLOPs down {pct:.2}% exactly"))
}

// ---------------------------------------------------------------- 7, 8, 9

const PRUNE_SEEDS: [u64; 3] = [1, 2, 3];

fn run_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn desk_config(prune_seed: u64, out: &Path, baseline: Option<PathBuf>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.root = Some(mnist_dir());
    cfg.prune_seed = prune_seed;
    cfg.baseline_checkpoint = baseline;
    cfg.output_dir = out.to_path_buf();
    cfg
}

struct Runs {
    outcomes: Vec<PipelineOutcome>,
    config: RunConfig,
}

fn pipeline_runs() -> Result<Runs, String> {
    let root = run_root();
    let first = root.join(format!("seed{}", PRUNE_SEEDS[0]));
    let config = desk_config(PRUNE_SEEDS[0], &first, None);
    let mut outcomes = vec![run_pipeline(&config, true).map_err(|e| format!("{e:#}"))?];
    for &s in &PRUNE_SEEDS[1..] {
        let cfg = desk_config(s, &root.join(format!("seed{s}")), Some(first.join("model.ckpt")));
        outcomes.push(run_pipeline(&cfg, true).map_err(|e| format!("{e:#}"))?);
    }
    Ok(Runs { outcomes, config })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end(runs: &Runs, warnings: &mut Vec<String>) -> Check {
    let baseline = runs.outcomes[0].baseline.accuracy;
    ensure(baseline >= 0.90, || format!("baseline accuracy {baseline:.4} < 0.90"))?;
    let ft = runs.config.finetune_config();
    ensure(ft.epochs <= (runs.config.train.epochs / 4).max(1), || format!("fine-tune epochs {}", ft.epochs))?;
    let acc = |m: Method, retrain: bool| {
        mean(runs.outcomes.iter().map(|o| {
            let r = o.method(m).unwrap();
            if retrain {
                r.retrain_eval.accuracy
            } else {
                r.prune_eval.accuracy
            }
        }))
    };
    let (func, l1, taylor) = (acc(Method::Functional, false), acc(Method::L1, false), acc(Method::Taylor, false));
    let gap = (func - l1) * 100.0;
    if gap < -1.0 {
        return Err(format!("functional prune accuracy {func:.4} trails l1 {l1:.4} by {:.2} points", -gap));
    }
    if gap < 0.0 {
        warnings.push(format!("functional prune accuracy {func:.4} trails l1 {l1:.4} by {:.2} points", -gap));
    }
    let retrain = acc(Method::Functional, true);
    let drop = (baseline - retrain) * 100.0;
    ensure(drop <= 1.5, || format!("functional retrain accuracy {retrain:.4} is {drop:.2} points below baseline {baseline:.4}"))?;
    let flops = runs.outcomes[0].method(Method::Functional).unwrap().row.flops_reduction_pct;
    Ok(format!(
        "baseline {baseline:.4}; mean prune acc functional {func:.4} / l1 {l1:.4} / taylor {taylor:.4}; \
         functional retrain {retrain:.4} ({drop:.2} pts below baseline); functional FLOPs down {flops:.2}%"
    ))
}

fn pattern_transition(runs: &Runs) -> Check {
    let o = &runs.outcomes[0];
    let interval = runs.config.trace.interval;
    ensure(interval == 100, || format!("trace interval {interval}"))?;
    let mut parts = Vec::new();
    for m in [Method::Functional, Method::L1, Method::Taylor] {
        let traces: Vec<_> = o.traces.iter().filter(|t| t.method == m).collect();
        ensure(traces.len() == 5, || format!("{}: {} traced filters", m.as_str(), traces.len()))?;
        for t in &traces {
            ensure(!t.points.is_empty(), || format!("{} filter {}: no trace points", m.as_str(), t.filter))?;
            ensure(t.points.iter().all(|p| p.iteration % interval == 0 && p.distance.is_finite()), || {
                format!("{} filter {}: bad trace point", m.as_str(), t.filter)
            })?;
        }
        parts.push(format!("{} {:.4}", m.as_str(), o.method(m).unwrap().mean_trace_distance));
    }
    let file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.dir.join("traces.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(file["mean_distance"].as_object().is_some_and(|m| m.len() == 3), || "traces.json lacks mean distances".into())?;
    Ok(format!("5 filters x {} points per method; mean distance {}", o.traces[0].points.len(), parts.join(", ")))
}

fn determinism(runs: &Runs) -> Check {
    let again = run_root().join("rerun");
    let cfg = RunConfig { output_dir: again.clone(), ..runs.config.clone() };
    run_pipeline(&cfg, true).map_err(|e| format!("{e:#}"))?;
    let first = &runs.outcomes[0].dir;
    let mut files = vec!["plan.json".to_string(), "clusters.json".to_string()];
    files.extend(cfg.methods.iter().map(|m| format!("plan_{}.json", m.as_str())));
    for f in &files {
        let a = std::fs::read(first.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(again.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

// ---------------------------------------------------------------- 10

fn round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut m = build_model("resnet-desk", 3).unwrap();
    randomize_batchnorm(&mut m, 1);
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&Checkpoint::new(m), &a).map_err(|e| e.to_string())?;
    let back = load_checkpoint(&a).map_err(|e| e.to_string())?;
    save_checkpoint(&back, &b).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), || "checkpoint bytes changed".into())?;

    let d = mnist_dir();
    let raw_x = std::fs::read(d.join("t10k-images-idx3-ubyte")).map_err(|e| e.to_string())?;
    let raw_y = std::fs::read(d.join("t10k-labels-idx1-ubyte")).map_err(|e| e.to_string())?;
    let ds = load_mnist(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte")).map_err(|e| e.to_string())?;
    let n = ds.len();
    ensure(ds.labels.iter().zip(&raw_y[8..]).all(|(&l, &r)| l == r as usize), || "MNIST labels differ".into())?;
    ensure(ds.images.data().iter().zip(&raw_x[16..]).all(|(&v, &r)| v == r as Scalar / 255.0), || "MNIST pixels differ".into())?;

    let bytes = synthetic_cifar(4, 1);
    let p = dir.path().join("data_batch_1.bin");
    std::fs::write(&p, &bytes).unwrap();
    let c = load_cifar10(&[&p]).map_err(|e| e.to_string())?;
    for (k, rec) in bytes.chunks(3073).enumerate() {
        ensure(c.labels[k] == rec[0] as usize, || format!("CIFAR label {k}"))?;
        ensure(c.images.item(k).iter().zip(&rec[1..]).all(|(&v, &r)| v == r as Scalar / 255.0), || format!("CIFAR record {k}"))?;
    }
    Ok(format!("checkpoint byte-stable, MNIST {n} test images and 4 CIFAR records match raw bytes"))
}

// ----------------------------------------------------------------

struct Line {
    id: u32,
    name: &'static str,
    budget: Duration,
    result: Check,
    elapsed: Duration,
}

fn timed(id: u32, name: &'static str, budget_s: u64, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    Line { id, name, budget: Duration::from_secs(budget_s), result, elapsed: start.elapsed() }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: u32| wanted.is_empty() || wanted.contains(&i);
    let mut lines = Vec::new();
    let mut warnings = Vec::new();

    let quick: [(u32, &'static str, u64, fn() -> Check); 7] = [
        (1, "gradient suite", 60, gradients),
        (2, "mask equivalence", 60, mask_equivalence),
        (3, "k-means suite", 30, kmeans_suite),
        (4, "contribution index suite", 120, contribution_suite),
        (5, "balanced pruning arithmetic", 10, balanced_pruning),
        (6, "FLOPs accounting", 10, flops_accounting),
        (10, "checkpoint and dataset round trips", 10, round_trips),
    ];
    for (id, name, budget, f) in quick.iter().filter(|q| q.0 != 10) {
        if want(*id) {
            lines.push(timed(*id, name, *budget, f));
        }
    }

    if want(7) || want(8) || want(9) {
        let start = Instant::now();
        let runs = catch_unwind(pipeline_runs).unwrap_or_else(|_| Err("pipeline panicked".into()));
        let shared = start.elapsed();
        match &runs {
            Ok(runs) => {
                if want(7) {
                    let mut l = timed(7, "desk-scale end to end", 20 * 60, || end_to_end(runs, &mut warnings));
                    l.elapsed += shared;
                    lines.push(l);
                }
                if want(8) {
                    lines.push(timed(8, "pattern-transition traces", 10 * 60, || pattern_transition(runs)));
                }
                if want(9) {
                    lines.push(timed(9, "pipeline determinism", 25 * 60, || determinism(runs)));
                }
            }
            Err(e) => {
                for (id, name) in [(7, "desk-scale end to end"), (8, "pattern-transition traces"), (9, "pipeline determinism")] {
                    if want(id) {
                        lines.push(Line { id, name, budget: Duration::ZERO, result: Err(e.clone()), elapsed: shared });
                    }
                }
            }
        }
    }
    let (id, name, budget, f) = quick[6];
    if want(id) {
        lines.push(timed(id, name, budget, f));
    }

    println!();
    let mut failed = 0;
    for l in &lines {
        let over = !l.budget.is_zero() && l.elapsed > l.budget;
        let (status, detail) = match &l.result {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {} s budget", l.budget.as_secs())),
            Err(e) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{:>2}] {} ({:.1} s): {detail}", l.id, l.name, l.elapsed.as_secs_f64());
    }
    for w in &warnings {
        println!("WARN [ 7] {w}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
