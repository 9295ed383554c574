//! Library-level checks on configs, runs and sweeps.

use hizfo_cli::config::ModelChoice;
use hizfo_cli::{run, run_many, run_sweep, Axis, ExperimentConfig};
use hizfo_core::{Algorithm, FoRule, LossKind};
use proptest::prelude::*;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::two_moons();
    c.model.dims = vec![2, 8, 8, 2];
    c.task.train_size = 64;
    c.task.eval_size = 64;
    c.task.batch_size = 16;
    c.optimizer.max_steps = 30;
    c
}

/// With a ZO step below one ulp and no perturbed-branch gradient, the hybrid reduces to
/// training the FO subset alone; only the perturb/restore round trip differs.
#[test]
fn zero_alpha_and_zero_zo_rate_match_the_frozen_subset() {
    let mut hybrid = small();
    hybrid.optimizer.alpha = 0.0;
    hybrid.optimizer.eta_zo = 1e-30;
    let mut frozen = hybrid.clone();
    frozen.algorithm = Algorithm::FrozenSubset;
    let a = run(&hybrid).unwrap().report;
    let b = run(&frozen).unwrap().report;
    assert_eq!(a.fo_tensors, b.fo_tensors);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.loss_fo - y.loss_fo).abs() <= 1e-9 * y.loss_fo.abs().max(1.0), "step {}: {} vs {}", x.step, x.loss_fo, y.loss_fo);
    }
}

#[test]
fn run_many_matches_sequential_runs() {
    let cfgs: Vec<ExperimentConfig> = (0..3)
        .map(|s| {
            let mut c = small();
            c.run.seed = s;
            c
        })
        .collect();
    let par = run_many(&cfgs).unwrap();
    for (cfg, p) in cfgs.iter().zip(&par) {
        let s = run(cfg).unwrap();
        assert_eq!(s.report.final_eval_loss, p.report.final_eval_loss);
    }
}

#[test]
fn sweep_points_summarize_their_rows() {
    let mut base = small();
    base.run.seeds = 3;
    let res = run_sweep(&base, Axis::Rho, &[0.3, 1.0], None).unwrap();
    assert_eq!(res.rows.len(), 6);
    for p in &res.points {
        let mut scores = res.scores_at(p.value);
        scores.sort_by(f64::total_cmp);
        assert_eq!(p.median_eval_loss, scores[1]);
    }
    // The full budget spends at least as much backward compute.
    assert!(res.points[1].mean_backward_flops >= res.points[0].mean_backward_flops);
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let kind = prop_oneof![Just(ModelChoice::Mlp), Just(ModelChoice::Quadratic), Just(ModelChoice::Rosenbrock), Just(ModelChoice::TinyLm)];
    (
        kind,
        proptest::collection::vec(1usize..32, 1..4),
        any::<bool>(),
        (1e-6f64..1.0, 1e-7f64..1.0, 1e-6f64..1e-1, 0.0f64..1.0),
        (0.01f64..=1.0, 10u64..100_000),
        (0u64..1000, 1usize..8, 0usize..500),
        prop_oneof![Just(Algorithm::Hizfo), Just(Algorithm::Mezo), Just(Algorithm::FrozenSubset), Just(Algorithm::FullFo)],
        any::<bool>(),
    )
        .prop_map(|(kind, hidden, mse, (eta_fo, eta_zo, eps, alpha), (rho, buckets), (seed, seeds, steps), algorithm, adam)| {
            let mut c = ExperimentConfig::two_moons();
            c.model.kind = kind;
            c.task.kind = kind.task();
            c.algorithm = algorithm;
            let mut dims = vec![2];
            dims.extend(hidden);
            dims.push(2);
            c.model.dims = dims;
            c.model.loss = if mse { LossKind::Mse } else { LossKind::CrossEntropy };
            c.optimizer.eta_fo = eta_fo;
            c.optimizer.eta_zo = eta_zo;
            c.optimizer.eps = eps;
            c.optimizer.alpha = alpha;
            c.optimizer.max_steps = steps;
            if adam {
                c.optimizer.fo_rule = FoRule::AdamLike;
            }
            c.partition.rho = rho;
            c.partition.buckets = buckets;
            c.run.seed = seed;
            c.run.seeds = seeds;
            // Keys that do not apply to the kind are not written, so keep
            // them at their defaults for the comparison.
            let d = ExperimentConfig::two_moons();
            if kind != ModelChoice::Mlp {
                c.model.dims = d.model.dims;
                c.model.loss = d.model.loss;
            }
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(cfg in arb_config()) {
        let text = cfg.to_text();
        let back: ExperimentConfig = text.parse().unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
