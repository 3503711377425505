#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use fprune_core::am::FilterPattern;
use fprune_core::autodiff::{forward, forward_with, ChannelEdit, EditKind, ForwardOptions, GradTarget, Mode, Reduction};
use fprune_core::data::{load_mnist, LabeledDataset};
use fprune_core::model::{ArchSpec, Layer, LayerDesc, ModelGraph};
use fprune_core::pruning::{
    apply_plan, build_plan_functional, build_plan_l1, build_plan_ranked, mask_edits, taylor_scores, Method, PruningPlan,
};
use fprune_core::redundancy::{contribution_index, ClusterResult, ContributionTable, LOCKED};
use fprune_core::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn mnist_test() -> LabeledDataset {
    let d = mnist_dir();
    load_mnist(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte")).unwrap()
}

pub fn mnist_train() -> LabeledDataset {
    let d = mnist_dir();
    load_mnist(d.join("train-images-idx3-ubyte"), d.join("train-labels-idx1-ubyte")).unwrap()
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi) as Scalar)
}

pub fn random_dataset(n: usize, shape: [usize; 3], classes: usize, seed: u64) -> LabeledDataset {
    let images = random_tensor(&[n, shape[0], shape[1], shape[2]], seed, 0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledDataset::new(images, labels, classes, "random").unwrap()
}

/// Give every batchnorm non-trivial running statistics and affine terms.
pub fn randomize_batchnorm(model: &mut ModelGraph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in &mut model.layers {
        if let Layer::BatchNorm(b) = &mut spec.layer {
            for c in 0..b.channels {
                b.gamma.data_mut()[c] = rng.random_range(0.5..1.5);
                b.beta.data_mut()[c] = rng.random_range(-0.3..0.3);
                b.running_mean.data_mut()[c] = rng.random_range(-0.2..0.2);
                b.running_var.data_mut()[c] = rng.random_range(0.5..2.0);
            }
        }
    }
}

/// Straight-loop eval-mode forward of one image, in f64, without the tape.
pub fn reference_forward(model: &ModelGraph, image: &[Scalar]) -> Vec<f64> {
    let [c0, h0, w0] = model.input_shape;
    let mut shape = vec![c0, h0, w0];
    let mut x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    let mut outputs: Vec<(String, Vec<f64>)> = Vec::new();
    for spec in &model.layers {
        match &spec.layer {
            Layer::Conv2d(c) => {
                let (cin, h, w) = (shape[0], shape[1], shape[2]);
                let ho = (h + 2 * c.padding - c.kernel) / c.stride + 1;
                let wo = (w + 2 * c.padding - c.kernel) / c.stride + 1;
                let mut y = vec![0.0; c.out_channels * ho * wo];
                for o in 0..c.out_channels {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut acc = c.bias.data()[o] as f64;
                            for ci in 0..cin {
                                for ki in 0..c.kernel {
                                    for kj in 0..c.kernel {
                                        let yi = (i * c.stride + ki) as isize - c.padding as isize;
                                        let xj = (j * c.stride + kj) as isize - c.padding as isize;
                                        if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                                            continue;
                                        }
                                        let wv = c.weight.data()[((o * cin + ci) * c.kernel + ki) * c.kernel + kj] as f64;
                                        acc += wv * x[(ci * h + yi as usize) * w + xj as usize];
                                    }
                                }
                            }
                            y[(o * ho + i) * wo + j] = acc;
                        }
                    }
                }
                x = y;
                shape = vec![c.out_channels, ho, wo];
            }
            Layer::BatchNorm(b) => {
                let hw = shape[1] * shape[2];
                for ch in 0..shape[0] {
                    let m = b.running_mean.data()[ch] as f64;
                    let v = b.running_var.data()[ch] as f64;
                    let g = b.gamma.data()[ch] as f64;
                    let be = b.beta.data()[ch] as f64;
                    for p in 0..hw {
                        let xv = &mut x[ch * hw + p];
                        *xv = g * (*xv - m) / (v + 1e-5).sqrt() + be;
                    }
                }
            }
            Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::MaxPool2d { size, stride } => {
                let (ch, h, w) = (shape[0], shape[1], shape[2]);
                let ho = (h - size) / stride + 1;
                let wo = (w - size) / stride + 1;
                let mut y = vec![0.0; ch * ho * wo];
                for c in 0..ch {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut m = f64::NEG_INFINITY;
                            for a in 0..*size {
                                for b in 0..*size {
                                    m = m.max(x[(c * h + i * stride + a) * w + j * stride + b]);
                                }
                            }
                            y[(c * ho + i) * wo + j] = m;
                        }
                    }
                }
                x = y;
                shape = vec![ch, ho, wo];
            }
            Layer::Flatten => shape = vec![x.len()],
            Layer::Dense(d) => {
                let mut y = vec![0.0; d.out_features];
                for (o, yv) in y.iter_mut().enumerate() {
                    let mut acc = d.bias.data()[o] as f64;
                    for (i, &xv) in x.iter().enumerate() {
                        acc += d.weight.data()[o * d.in_features + i] as f64 * xv;
                    }
                    *yv = acc;
                }
                x = y;
                shape = vec![d.out_features];
            }
            Layer::Add { skip } => {
                let other = &outputs.iter().find(|(n, _)| n == skip).unwrap().1;
                x.iter_mut().zip(other).for_each(|(a, b)| *a += b);
            }
        }
        outputs.push((spec.name.clone(), x.clone()));
    }
    x
}

/// Random conv stack ending in flatten + dense, valid by construction.
pub fn random_arch(seed: u64) -> ArchSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let (h0, w0) = (rng.random_range(8..=16usize), rng.random_range(8..=16usize));
    let (mut h, mut w) = (h0, w0);
    let mut layers = Vec::new();
    for i in 1..=rng.random_range(1..=3) {
        let kernel = if rng.random_bool(0.5) && h >= 3 && w >= 3 { 3 } else { 1 };
        let padding = if kernel == 3 { rng.random_range(0..=1) } else { 0 };
        let stride = rng.random_range(1..=2);
        let out = rng.random_range(1..=8);
        layers.push(LayerDesc::Conv { name: format!("conv{i}"), out, kernel, stride, padding, block: None, filter_origin: None });
        h = (h + 2 * padding - kernel) / stride + 1;
        w = (w + 2 * padding - kernel) / stride + 1;
        if rng.random_bool(0.5) {
            layers.push(LayerDesc::Batchnorm { name: format!("conv{i}_bn") });
        }
        layers.push(LayerDesc::Relu { name: format!("conv{i}_relu") });
        if h >= 2 && w >= 2 && rng.random_bool(0.5) {
            layers.push(LayerDesc::Maxpool { name: format!("pool{i}"), size: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
    }
    layers.push(LayerDesc::Flatten { name: "flatten".into() });
    layers.push(LayerDesc::Dense { name: "fc".into(), out: rng.random_range(2..=10) });
    ArchSpec { name: format!("random-{seed}"), input_shape: [c, h0, w0], layers }
}

pub fn pattern(filter: usize, v: &[f64]) -> FilterPattern {
    FilterPattern {
        layer: "conv".into(),
        filter,
        pattern: Tensor::new(vec![1, 1, v.len()], v.iter().map(|&x| x as Scalar).collect()).unwrap(),
        activation: 1.0,
        initial_activation: 0.0,
        steps: 1,
        step_size: 0.1,
        dead: false,
        config_hash: String::new(),
    }
}

pub fn wcss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums.iter().zip(&counts).map(|(s, &c)| s.iter().map(|v| v / c as f64).collect()).collect();
    points.iter().zip(labels).map(|(p, &l)| p.iter().zip(&means[l]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum()
}

/// Minimum within-cluster sum of squares over every partition into exactly
/// `k` non-empty blocks (restricted growth strings).
pub fn brute_force(points: &[Vec<f64>], k: usize) -> f64 {
    fn rec(points: &[Vec<f64>], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut f64) {
        let n = points.len();
        if labels.len() == n {
            if used == k {
                *best = best.min(wcss(points, labels, k));
            }
            return;
        }
        if used + (n - labels.len()) < k {
            return;
        }
        for l in 0..=used.min(k - 1) {
            labels.push(l);
            rec(points, k, labels, used.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(points, k, &mut Vec::new(), 0, &mut best);
    best
}

pub fn planted() -> (Vec<Vec<f64>>, Vec<usize>) {
    let centers = [[0.0, 0.0, 0.0, 0.0], [5.0, 5.0, 0.0, 0.0], [0.0, 5.0, 5.0, 5.0]];
    let mut pts = Vec::new();
    for c in &centers {
        for _ in 0..4 {
            pts.push(c.to_vec());
        }
        pts.push(c.iter().map(|v| v + 0.3).collect());
    }
    let outliers = vec![pts.len(), pts.len() + 1];
    pts.push(vec![20.0, -20.0, 20.0, -20.0]);
    pts.push(vec![-20.0, 20.0, -20.0, 20.0]);
    (pts, outliers)
}

/// Walk the architecture and tick a counter once per operation.
pub fn loop_count(arch: &ArchSpec) -> u64 {
    let [mut c, mut h, mut w] = arch.input_shape;
    let mut flat: Option<usize> = None;
    let mut ops = 0u64;
    for layer in &arch.layers {
        match layer {
            LayerDesc::Conv { out, kernel, stride, padding, .. } => {
                let ho = (h + 2 * padding - kernel) / stride + 1;
                let wo = (w + 2 * padding - kernel) / stride + 1;
                for _o in 0..*out {
                    for _pos in 0..ho * wo {
                        for _tap in 0..c * kernel * kernel {
                            ops += 1; // multiply
                            ops += 1; // add
                        }
                    }
                }
                (c, h, w) = (*out, ho, wo);
            }
            LayerDesc::Batchnorm { .. } => {
                for _ in 0..c * h * w {
                    ops += 2;
                }
            }
            LayerDesc::Relu { .. } | LayerDesc::Add { .. } => {
                for _ in 0..flat.unwrap_or(c * h * w) {
                    ops += 1;
                }
            }
            LayerDesc::Maxpool { size, stride, .. } => {
                let ho = (h - size) / stride + 1;
                let wo = (w - size) / stride + 1;
                for _ in 0..c * ho * wo {
                    for _ in 0..size * size {
                        ops += 1;
                    }
                }
                (h, w) = (ho, wo);
            }
            LayerDesc::Flatten { .. } => flat = Some(c * h * w),
            LayerDesc::Dense { out, .. } => {
                let input = flat.expect("dense after flatten");
                for _ in 0..input * out {
                    ops += 2;
                }
                flat = Some(*out);
            }
        }
    }
    ops
}

/// Closed form for the desk ConvNet with conv widths `c`.
pub fn desk_closed_form(c: [u64; 4]) -> u64 {
    let conv = |cin: u64, cout: u64, hw: u64| 2 * cin * cout * 9 * hw;
    let bn_relu = |ch: u64, hw: u64| 3 * ch * hw;
    let pool = |ch: u64, out_hw: u64| 4 * ch * out_hw;
    conv(1, c[0], 784) + bn_relu(c[0], 784) + pool(c[0], 196)
        + conv(c[0], c[1], 196) + bn_relu(c[1], 196) + pool(c[1], 49)
        + conv(c[1], c[2], 49) + bn_relu(c[2], 49)
        + conv(c[2], c[3], 49) + bn_relu(c[3], 49) + pool(c[3], 9)
        + 2 * c[3] * 9 * 10
}

pub fn table(layer: &str, values: Vec<f64>) -> ContributionTable {
    ContributionTable { layer: layer.into(), hook: layer.into(), samples: 1, norm: "l2-spatial".into(), values }
}

/// Cluster result with clusters of the given sizes plus `locked` locked
/// filters, assigned to shuffled filter indices.
pub fn clusters(layer: &str, sizes: &[usize], locked: usize, rng: &mut ChaCha8Rng) -> ClusterResult {
    let mut labels: Vec<i64> = Vec::new();
    for (c, &s) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(c as i64).take(s));
    }
    labels.extend(std::iter::repeat(LOCKED).take(locked));
    labels.shuffle(rng);
    let n = labels.len();
    ClusterResult {
        layer: layer.into(),
        k: sizes.len(),
        grid_k: sizes.len(),
        filters: (0..n).collect(),
        assignment: labels,
        centroids: vec![],
        objective: 0.0,
        clustered_ratio: (n - locked) as f64 / n as f64,
        theta: 0.85,
        seed: 0,
        grid: vec![],
    }
}

pub fn random_sizes(total: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let locked = rng.random_range(0..=total / 4);
    let mut left = total - locked;
    let mut sizes = Vec::new();
    while left > 0 {
        let s = if left <= 3 { left } else { rng.random_range(2..=left.min(8)) };
        sizes.push(s);
        left -= s;
    }
    (sizes, locked)
}

pub fn random_ratios(model: &ModelGraph, rng: &mut ChaCha8Rng) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for l in model.prunable_convs() {
        if rng.random_bool(0.75) {
            out.insert(l, rng.random_range(0.05..0.9));
        }
    }
    out
}

pub fn random_plan(model: &ModelGraph, method: Method, seed: u64) -> PruningPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = random_ratios(model, &mut rng);
    if ratios.is_empty() {
        ratios.insert(model.prunable_convs()[0].clone(), 0.5);
    }
    match method {
        Method::L1 => build_plan_l1(model, &ratios).unwrap(),
        Method::Taylor => {
            let data = random_dataset(8, model.input_shape, 10, seed);
            let layers: Vec<String> = ratios.keys().cloned().collect();
            build_plan_ranked(Method::Taylor, &taylor_scores(model, &data, &layers, 4).unwrap(), &ratios).unwrap()
        }
        Method::Functional => {
            let mut cs = Vec::new();
            let mut ts = Vec::new();
            for layer in ratios.keys() {
                let n = model.conv(layer).unwrap().out_channels;
                let (sizes, locked) = random_sizes(n, &mut rng);
                cs.push(clusters(layer, &sizes, locked, &mut rng));
                ts.push(table(layer, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()));
            }
            build_plan_functional(&cs, &ts, &ratios).unwrap()
        }
    }
}

/// Largest absolute gap between pruned logits and masked-original logits.
pub fn mask_gap(model: &ModelGraph, plan: &PruningPlan, x: &Tensor) -> f64 {
    let pruned = apply_plan(model, plan).unwrap();
    let edits = mask_edits(model, plan).unwrap();
    let a = forward(&pruned, x, Mode::Eval).unwrap().output().clone();
    let b = forward_with(model, x, Mode::Eval, &ForwardOptions { edits: &edits, ..Default::default() })
        .unwrap()
        .output()
        .clone();
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs() as f64).fold(0.0, f64::max)
}

pub fn assert_mask_equivalent(model: &ModelGraph, plan: &PruningPlan, x: &Tensor) {
    let gap = mask_gap(model, plan, x);
    assert!(gap <= 1e-5, "{:?} plan: gap {gap}", plan.method);
}

pub fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Groups of jittered points around well-separated random centers.
pub fn grouped_points(n: usize, groups: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> = (0..groups).map(|g| [g as f64 * 10.0, rng.random_range(-10.0..10.0)]).collect();
    (0..n)
        .map(|i| {
            let c = centers[i % groups];
            vec![c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]
        })
        .collect()
}

pub fn synthetic_cifar(records: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..records {
        out.push(rng.random_range(0..10u8));
        out.extend((0..3072).map(|_| rng.random::<u8>()));
    }
    out
}


/// conv(1 filter, 1x1) -> flatten -> dense(3) -> cross-entropy, with its
/// contribution index and Taylor score worked out by hand. The map gradient
/// is W^T (softmax - onehot).
pub fn one_filter_case() -> (ModelGraph, LabeledDataset, f64, f64) {
    let arch = ArchSpec {
        name: "one".into(),
        input_shape: [1, 3, 3],
        layers: vec![
            LayerDesc::Conv { name: "conv".into(), out: 1, kernel: 1, stride: 1, padding: 0, block: None, filter_origin: None },
            LayerDesc::Flatten { name: "flatten".into() },
            LayerDesc::Dense { name: "fc".into(), out: 3 },
        ],
    };
    let m = ModelGraph::from_arch(&arch, 11).unwrap();
    let data = random_dataset(5, [1, 3, 3], 3, 8);
    let c = m.conv("conv").unwrap();
    let (w, b) = (c.weight.data()[0] as f64, c.bias.data()[0] as f64);
    let Layer::Dense(d) = &m.layer("fc").unwrap().layer else { unreachable!() };
    let dw: Vec<f64> = d.weight.data().iter().map(|&v| v as f64).collect();
    let db: Vec<f64> = d.bias.data().iter().map(|&v| v as f64).collect();

    let (mut norm_sum, mut ag_sum) = (0.0, 0.0);
    for n in 0..data.len() {
        let a: Vec<f64> = data.images.item(n).iter().map(|&x| w * x as f64 + b).collect();
        let logits: Vec<f64> = (0..3).map(|j| db[j] + (0..9).map(|p| dw[j * 9 + p] * a[p]).sum::<f64>()).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let delta: Vec<f64> = (0..3).map(|j| (logits[j] - mx).exp() / z - if j == data.labels[n] { 1.0 } else { 0.0 }).collect();
        let g: Vec<f64> = (0..9).map(|p| (0..3).map(|j| dw[j * 9 + p] * delta[j]).sum()).collect();
        norm_sum += g.iter().map(|v| v * v).sum::<f64>().sqrt();
        ag_sum += a.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>();
    }
    (m, data, norm_sum / 5.0, (ag_sum / (5.0 * 9.0)).abs())
}

/// Shift the highest-contribution filter's map of `layer` by `delta` everywhere and
/// return (actual summed-loss change, first-order prediction delta * sum g).
pub fn linearization(m: &ModelGraph, data: &LabeledDataset, layer: &str, delta: f64) -> (f64, f64) {
    let t = contribution_index(m, data, layer).unwrap();
    let top = *t.ascending().last().unwrap();
    let hook = t.hook.clone();

    let (x, y) = data.range(0, data.len());
    let mut pass = forward(m, &x, Mode::Eval).unwrap();
    let (loss_node, base) = pass.attach_loss(&y, Reduction::Sum).unwrap();
    let g = pass.backward(loss_node, &[GradTarget::Activation(hook.clone())]).unwrap().activations.remove(&hook).unwrap();
    let [n, c, h, w] = g.dims4();
    let mut gsum = 0.0f64;
    for s in 0..n {
        let off = (s * c + top) * h * w;
        gsum += g.data()[off..off + h * w].iter().map(|&v| v as f64).sum::<f64>();
    }

    let edits = [ChannelEdit { layer: hook, channel: top, kind: EditKind::Shift(delta as Scalar) }];
    let mut shifted = forward_with(m, &x, Mode::Eval, &ForwardOptions { edits: &edits, ..Default::default() }).unwrap();
    let (_, moved) = shifted.attach_loss(&y, Reduction::Sum).unwrap();
    (moved - base, gsum * delta)
}
