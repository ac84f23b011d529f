use proptest::prelude::*;

use spectr_core::coupling::{
    alpha_upper_bound, beta, gamma_gap, kseq_acceptance, kseq_gamma_star, kseq_output_marginal, otm_lp_solve,
    DEFAULT_GAMMA_DELTA,
};
use spectr_core::decode::{spectr_decode, Drafting, SelectionMethod, SpectrConfig};
use spectr_core::drafts::build_prefix_tree_drafts;
use spectr_core::lm::{make_model_pair, probe_contexts, ToyLm};
use spectr_core::prob::{self, ProbVector, RngStream, TokenId};

/// Weights in [0, 1) with roughly one entry in five forced to zero.
fn dist(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.001f64..1.0], len)
        .prop_filter_map("all-zero weights", |w| ProbVector::from_weights(w).ok())
}

fn pair(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (ProbVector, ProbVector)> {
    len.prop_flat_map(|n| (dist(n..=n), dist(n..=n)))
        .prop_filter("disjoint supports", |(p, q)| prob::tv_distance(p, q).unwrap() < 1.0 - 1e-9)
}

fn max_abs_diff(a: &ProbVector, b: &ProbVector) -> f64 {
    a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn tv_is_one_minus_overlap((p, q) in (2usize..=8).prop_flat_map(|n| (dist(n..=n), dist(n..=n)))) {
        let half_l1: f64 = 0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let tv = prob::tv_distance(&p, &q).unwrap();
        prop_assert!((tv - half_l1).abs() < 1e-12);
        prop_assert!((tv - (1.0 - prob::overlap(&p, &q).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn residual_is_a_distribution((p, q) in pair(2..=8)) {
        prop_assume!(prob::tv_distance(&p, &q).unwrap() > 1e-9);
        let r = prob::residual_maximal(&p, &q).unwrap();
        prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(r.probs().iter().all(|&x| x >= 0.0));
        for (i, &x) in r.probs().iter().enumerate() {
            if q.probs()[i] <= p.probs()[i] {
                prop_assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic(p in dist(2..=8), seed in any::<u64>()) {
        let draw = |s| {
            let mut rng = RngStream::new(s);
            (0..32).map(|_| prob::sample(&p, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(seed);
        prop_assert_eq!(&a, &draw(seed));
        prop_assert!(a.iter().all(|t| p.prob(*t) > 0.0));
    }

    #[test]
    fn kseq_marginal_is_exact((p, q) in pair(2..=6), k in 1usize..=8) {
        let g = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA).unwrap();
        for gamma in [g, g + 0.1, k as f64] {
            let m = kseq_output_marginal(&p, &q, k, gamma).unwrap();
            prop_assert!(max_abs_diff(&m, &q) <= 1e-9, "gamma {} deviation {}", gamma, max_abs_diff(&m, &q));
        }
    }

    #[test]
    fn gamma_gap_decreases_and_brackets_gamma_star((p, q) in pair(2..=6), k in 2usize..=8) {
        let grid: Vec<f64> = (0..=50).map(|i| 1.0 + (k as f64 - 1.0) * i as f64 / 50.0).collect();
        for w in grid.windows(2) {
            prop_assert!(gamma_gap(&p, &q, k, w[1]) <= gamma_gap(&p, &q, k, w[0]) + 1e-12);
        }
        let g = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA).unwrap();
        let ratio = p
            .probs()
            .iter()
            .zip(q.probs())
            .filter(|(_, &qq)| qq > 0.0)
            .map(|(&pp, &qq)| if pp > 0.0 { qq / pp } else { f64::INFINITY })
            .fold(0.0, f64::max);
        prop_assert!(g >= 1.0);
        prop_assert!(g <= (k as f64).min(ratio) + 2.0 * DEFAULT_GAMMA_DELTA, "gamma* {} ratio {}", g, ratio);
        prop_assert!(beta(&p, &q, g) > 0.0);
    }

    #[test]
    fn k1_reduction((p, q) in pair(2..=6)) {
        let overlap = prob::overlap(&p, &q).unwrap();
        let (_, alpha) = otm_lp_solve(&p, &q, 1).unwrap();
        prop_assert!((alpha - overlap).abs() <= 1e-7);
        prop_assert!((kseq_acceptance(&p, &q, 1, 1.0).unwrap() - overlap).abs() <= 1e-12);
    }

    #[test]
    fn plans_have_exact_marginals((p, q) in pair(2..=5), k in 1usize..=3) {
        let (plan, alpha) = otm_lp_solve(&p, &q, k).unwrap();
        prop_assert!(plan.marginal_violation(&p, &q) <= 1e-7);
        prop_assert!((plan.acceptance() - alpha).abs() <= 1e-9);
    }

    #[test]
    fn acceptance_sandwich((p, q) in pair(2..=5), k in 1usize..=3) {
        let (_, otm) = otm_lp_solve(&p, &q, k).unwrap();
        let (bar, _) = alpha_upper_bound(&p, &q, k).unwrap();
        let g = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA).unwrap();
        let kseq = kseq_acceptance(&p, &q, k, g).unwrap();
        let c = 1.0 - (1.0 - 1.0 / k as f64).powi(k as i32);
        prop_assert!(c * bar <= kseq + 1e-7, "c*bar {} kseq {}", c * bar, kseq);
        prop_assert!(kseq <= otm + 1e-7, "kseq {} otm {}", kseq, otm);
        prop_assert!(otm <= bar + 1e-7, "otm {} bar {}", otm, bar);
    }

    #[test]
    fn otm_is_monotone_in_k((p, q) in pair(2..=5)) {
        let alphas: Vec<f64> = (1..=3).map(|k| otm_lp_solve(&p, &q, k).unwrap().1).collect();
        prop_assert!(alphas[0] <= alphas[1] + 1e-7 && alphas[1] <= alphas[2] + 1e-7, "{:?}", alphas);
    }

    #[test]
    fn model_rows_are_valid_and_stable(
        vocab in 2usize..=12,
        order in 0usize..=3,
        seed in any::<u64>(),
        ctx in prop::collection::vec(0u32..12, 0..6),
    ) {
        let ctx: Vec<TokenId> = ctx.into_iter().map(|t| TokenId(t % vocab as u32)).collect();
        let model = ToyLm::random(vocab, order, seed).unwrap();
        let row = model.next_dist(&ctx).unwrap();
        prop_assert!((row.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(row.probs().iter().all(|&x| x > 0.0));
        let again = ToyLm::random(vocab, order, seed).unwrap();
        let row_again = again.next_dist(&ctx).unwrap();
        prop_assert_eq!(row.as_ref(), row_again.as_ref());
    }

    #[test]
    fn divergence_grows_with_eps(seed in 0u64..1000, vocab in 2usize..=10) {
        let probes = probe_contexts(vocab, 1, seed);
        let tvs: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&eps| make_model_pair(vocab, 1, seed, eps).unwrap().mean_tv(&probes).unwrap())
            .collect();
        prop_assert_eq!(tvs[0], 0.0);
        for w in tvs.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12, "{:?}", tvs);
        }
    }

    #[test]
    fn tree_shape_and_cache(factors in prop::collection::vec(1usize..=3, 1..=4), seed in any::<u64>()) {
        let small = ToyLm::random(5, 2, 11).unwrap();
        let set = build_prefix_tree_drafts(&small, &[TokenId(1)], &factors, &RngStream::new(seed)).unwrap();
        prop_assert_eq!(set.num_sequences(), factors.iter().product::<usize>());
        for seq in set.sequences() {
            prop_assert_eq!(seq.len(), factors.len());
            for i in 0..seq.len() {
                prop_assert!(set.small_conditional(&seq[..i]).is_some());
            }
        }
    }

    #[test]
    fn emitted_per_iteration_stays_in_range(
        seed in any::<u64>(),
        eps in 0.0f64..=1.0,
        k in 1usize..=4,
        len in 1usize..=4,
        tree in any::<bool>(),
    ) {
        let pair = make_model_pair(6, 1, seed % 97, eps).unwrap();
        let config = match (tree, k) {
            (_, 1) => SpectrConfig::speculative(len),
            (true, _) => SpectrConfig {
                drafting: Drafting::Tree { factors: vec![k; len.min(2)] },
                method: SelectionMethod::KSEQ,
            },
            (false, _) => SpectrConfig::iid(k, len, SelectionMethod::KSEQ),
        };
        let trace = spectr_decode(&pair.big, &pair.small, &[TokenId(0)], 20, &config, &RngStream::new(seed)).unwrap();
        let l = config.drafting.draft_length();
        for it in &trace.per_iteration {
            prop_assert!((1..=l + 1).contains(&it.emitted()));
        }
        prop_assert_eq!(trace.serial_big_calls, trace.per_iteration.len());
    }
}
