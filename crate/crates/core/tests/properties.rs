//! Property tests over random masks, instances and budgets.

use hizfo_core::data::{char_windows, two_moons, ByteVocab, BUILTIN_CORPUS};
use hizfo_core::verify::random_instance;
use hizfo_core::{solve_dp, ImportanceProfile, LayeredModel, LossKind, MlpSpec, TinyLmSpec};
use proptest::prelude::*;

fn mlp() -> LayeredModel {
    LayeredModel::mlp(MlpSpec::new(vec![2, 12, 10, 2], LossKind::CrossEntropy)).unwrap()
}

fn lm() -> (LayeredModel, hizfo_core::Batch) {
    let vocab = ByteVocab::build(BUILTIN_CORPUS.as_bytes(), 24).unwrap();
    let spec = TinyLmSpec { vocab: vocab.size(), context: 6, d_model: 8, d_ff: 12, depth: 2 };
    let tokens = vocab.encode(BUILTIN_CORPUS.as_bytes());
    (LayeredModel::tiny_lm(spec).unwrap(), char_windows(&tokens, 6, 4, 3).unwrap())
}

fn assert_truncated_matches_full(model: &LayeredModel, batch: &hizfo_core::Batch, mask: &[bool], seed: u64) {
    let params = model.init_params(seed);
    let full = model.full_gradient(&params, batch).unwrap();
    let tape = model.forward_tape(&params, batch).unwrap();
    let part = model.backward(&params, &tape, mask).unwrap();
    for (k, &on) in mask.iter().enumerate() {
        match (on, part.by_index(k)) {
            (true, Some(g)) => {
                let f = full.by_index(k).unwrap();
                for (a, b) in g.iter().zip(f) {
                    assert!((a - b).abs() <= 1e-12, "tensor {k}: {a} vs {b}");
                }
            }
            (false, None) => {}
            (on, g) => panic!("tensor {k}: active {on}, gradient present {}", g.is_some()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mlp_truncated_backward_matches_full(mask in prop::collection::vec(any::<bool>(), 6), seed in 0u64..1000) {
        let batch = two_moons(16, 0.1, seed).unwrap();
        assert_truncated_matches_full(&mlp(), &batch, &mask, seed);
    }

    #[test]
    fn lm_truncated_backward_matches_full(bits in any::<u32>(), seed in 0u64..1000) {
        let (model, batch) = lm();
        let mask: Vec<bool> = (0..model.num_tensors()).map(|k| bits >> (k % 32) & 1 == 1).collect();
        assert_truncated_matches_full(&model, &batch, &mask, seed);
    }

    #[test]
    fn adding_a_tensor_never_lowers_backward_flops(mask in prop::collection::vec(any::<bool>(), 18), extra in 0usize..18) {
        let (model, _) = lm();
        let cost = model.flops_profile(4);
        let n = cost.len();
        let mut mask: Vec<bool> = mask.into_iter().cycle().take(n).collect();
        let before = cost.backward_flops(&mask);
        mask[extra % n] = true;
        prop_assert!(cost.backward_flops(&mask) >= before);
        prop_assert!(cost.backward_flops(&mask) <= cost.t_full());
    }

    #[test]
    fn dp_importance_is_monotone_in_budget(n in 1usize..10, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (profile, cost, _) = random_instance(n, seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = solve_dp(&profile, &cost, lo, 100_000).unwrap();
        let p_hi = solve_dp(&profile, &cost, hi, 100_000).unwrap();
        prop_assert!(p_hi.achieved_importance >= p_lo.achieved_importance - 1e-12);
        prop_assert!(p_lo.consumed_flops as f64 <= p_lo.budget_flops);
        prop_assert!(p_hi.consumed_flops as f64 <= p_hi.budget_flops);
    }

    #[test]
    fn importance_normalisation_is_scale_free(raw in prop::collection::vec(-5.0f64..5.0, 1..12), scale in 0.01f64..100.0) {
        let names: Vec<String> = (0..raw.len()).map(|k| format!("t{k}")).collect();
        let layers: Vec<usize> = (0..raw.len()).collect();
        let p = ImportanceProfile::from_raw(names.clone(), layers.clone(), raw.clone(), 5).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let q = ImportanceProfile::from_raw(names, layers, scaled, 5).unwrap();
        let max = p.scores().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max == 0.0 || (max - 1.0).abs() < 1e-12);
        for ((a, b), r) in p.scores().iter().zip(q.scores()).zip(&raw) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a.signum() == r.signum() || *r == 0.0);
        }
        prop_assert_eq!(p.ranking(), q.ranking());
    }
}

#[test]
fn t_full_is_the_all_active_tally() {
    let (model, batch) = lm();
    for m in [mlp(), model] {
        let cost = m.flops_profile(batch.size);
        assert_eq!(cost.backward_flops(&vec![true; cost.len()]), cost.t_full());
    }
}

#[test]
fn counted_mlp_flops_match_the_cost_model() {
    let model = mlp();
    let params = model.init_params(1);
    let batch = two_moons(16, 0.1, 2).unwrap();
    let cost = model.flops_profile(batch.size);
    for bits in 0u32..(1 << 6) {
        let mask: Vec<bool> = (0..6).map(|k| bits >> k & 1 == 1).collect();
        let counted = model.counted_backward_flops(&params, &batch, &mask).unwrap().unwrap();
        assert_eq!(counted, cost.backward_flops(&mask), "mask {mask:?}");
    }
}

#[test]
fn full_budget_selects_every_positive_tensor() {
    let (profile, cost, _) = random_instance(8, 11);
    let plan = solve_dp(&profile, &cost, 1.0, 100_000).unwrap();
    let positive = profile.scores().iter().filter(|&&s| s > 0.0).count();
    assert_eq!(plan.fo.len(), positive);
}
