//! Pinned outputs for fixed seeds. A change here means the random streams or
//! the toy models changed, which breaks reproducibility of earlier runs.

use spectr_core::bench::decode::{run_decode_bench, DecodeBenchConfig};
use spectr_core::lm::{make_model_pair, probe_contexts, CostModel, ToyLmSpec};

fn default_model() -> ToyLmSpec {
    ToyLmSpec {
        vocab_size: 16,
        order: 1,
        seed: 7,
        eps: 0.3,
        allow_zeros: false,
    }
}

#[test]
fn probe_divergence_is_pinned() {
    let pair = make_model_pair(16, 1, 7, 0.3).unwrap();
    let tv = pair.mean_tv(&probe_contexts(16, 1, 0)).unwrap();
    assert!((tv - 0.15117852220737193).abs() < 1e-12, "{tv}");
}

#[test]
fn default_decode_bench_is_pinned() {
    let result = run_decode_bench(&DecodeBenchConfig::new(default_model())).unwrap();
    let got: Vec<f64> = result.summaries.iter().map(|s| s.mean_block_efficiency).collect();
    let expected = [
        1.0,
        3.7171123482294957,
        4.106077723059532,
        4.265069911297851,
        4.362999313186811,
        5.247671088393032,
        5.849308323620822,
        6.104284423909428,
        6.293448995448999,
    ];
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-11, "{got:?}");
    }
}

#[test]
fn speedup_with_small_model_cost_is_pinned() {
    let mut cfg = DecodeBenchConfig::new(default_model());
    cfg.prompts = 50;
    cfg.drafts = vec![1, 4];
    cfg.lengths = vec![4];
    cfg.cost = CostModel::new(1.0, 0.18, 0.0).unwrap();
    let result = run_decode_bench(&cfg).unwrap();
    let got: Vec<f64> = result.summaries.iter().map(|s| s.simulated_speedup).collect();
    for (g, e) in got.iter().zip([1.0, 2.1676797040169133, 2.4945208815292848]) {
        assert!((g - e).abs() < 1e-11, "{got:?}");
    }
}
