mod common;

use std::collections::BTreeMap;

use common::{desk_closed_form, loop_count, random_arch};
use fprune_core::model::flops::{count_flops, reduction_pct};
use fprune_core::model::{build_model, ModelGraph};
use fprune_core::pruning::{apply_plan, build_plan_l1, compute_layer_ratios, LayerCoefficients};

#[test]
fn matches_loop_oracle_on_random_architectures() {
    for seed in 0..5 {
        let arch = random_arch(seed);
        let m = ModelGraph::skeleton(&arch).unwrap();
        assert_eq!(count_flops(&m).total, loop_count(&arch), "{arch:?}");
    }
}

#[test]
fn matches_loop_oracle_on_zoo() {
    for name in ["convnet-desk", "vgg-desk", "resnet-desk"] {
        let m = build_model(name, 0).unwrap();
        assert_eq!(count_flops(&m).total, loop_count(&m.arch()), "{name}");
    }
}

#[test]
fn forty_percent_reduction_matches_closed_form() {
    let m = build_model("convnet-desk", 3).unwrap();
    let before = count_flops(&m).total;
    assert_eq!(before, desk_closed_form([8, 16, 16, 32]));

    let ratios = compute_layer_ratios(0.4, &LayerCoefficients::uniform(1.0), &m).unwrap();
    let pruned = apply_plan(&m, &build_plan_l1(&m, &ratios).unwrap()).unwrap();
    // round_half_up(0.4 * [8, 16, 16, 32]) = [3, 6, 6, 13]
    let kept = [5, 10, 10, 19];
    let after = count_flops(&pruned).total;
    assert_eq!(after, desk_closed_form(kept));
    let expected = (1.0 - desk_closed_form(kept) as f64 / desk_closed_form([8, 16, 16, 32]) as f64) * 100.0;
    assert_eq!(reduction_pct(before, after), expected);
}

#[test]
fn per_layer_entries_sum_to_total() {
    let m = build_model("resnet-desk", 0).unwrap();
    let r = count_flops(&m);
    assert_eq!(r.per_layer.iter().map(|l| l.flops).sum::<u64>(), r.total);
    assert_eq!(r.per_layer.len(), m.layers.len());
    assert_eq!(r.layer("flatten"), Some(0));
    let mut ratios = BTreeMap::new();
    ratios.insert("block1_conv1".to_string(), 0.5);
    let p = apply_plan(&m, &build_plan_l1(&m, &ratios).unwrap()).unwrap();
    let rp = count_flops(&p);
    assert_eq!(rp.layer("block1_conv1").unwrap() * 2, r.layer("block1_conv1").unwrap());
    assert_eq!(rp.layer("block1_conv2").unwrap() * 2, r.layer("block1_conv2").unwrap());
    assert_eq!(rp.layer("block1_add"), r.layer("block1_add"));
}
