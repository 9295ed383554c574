//! Frozen regression values from end-to-end runs.

use hizfo_core::optimizer::StepHooks;
use hizfo_core::verify::{cost_audit, restore_audit, RESTORE_MAX_DRIFT, RESTORE_MAX_ULP, RESTORE_STEPS};
use hizfo_core::{Algorithm, Batch, LayeredModel, OptimizerConfig, Role, RosenbrockSpec};

#[test]
fn rosenbrock_hybrid_run_reaches_the_valley_floor() {
    let model = LayeredModel::rosenbrock(RosenbrockSpec::default()).unwrap();
    for seed in 0..3 {
        let mut params = model.init_params(seed);
        params.set_role("x", Role::Fo).unwrap();
        params.set_role("y", Role::Zo).unwrap();
        let cfg = OptimizerConfig {
            eta_fo: 1e-3,
            eta_zo: 1e-3,
            master_seed: seed,
            max_steps: 50_000,
            ..OptimizerConfig::default()
        };
        let report = hizfo_core::optimizer::train(&model, &mut params, &[Batch::analytic()], None, &cfg, Algorithm::Hizfo, StepHooks::default()).unwrap();
        assert!(!report.diverged);
        let first = report.records.iter().position(|r| r.loss_fo < 1e-2);
        assert!(first.is_some(), "seed {seed} never went below 1e-2");
        assert!(report.final_train_loss.unwrap() < 1e-2);
    }
}

#[test]
fn restore_leaves_no_residue_over_a_thousand_steps() {
    let a = restore_audit(RESTORE_STEPS, false, 9).unwrap();
    assert_eq!(a.steps, RESTORE_STEPS);
    assert!(a.max_ulp <= RESTORE_MAX_ULP, "{a:?}");
    assert!(a.relative_drift <= RESTORE_MAX_DRIFT, "{a:?}");
}

#[test]
fn negated_restore_shows_up_in_both_measures() {
    let a = restore_audit(50, true, 9).unwrap();
    assert!(a.max_ulp > RESTORE_MAX_ULP && a.relative_drift > RESTORE_MAX_DRIFT, "{a:?}");
}

#[test]
fn planned_cost_equals_measured_backward_flops() {
    for rho in [0.2, 0.6, 1.0] {
        let (planned, tallied, counted) = cost_audit(rho, 3).unwrap();
        assert_eq!(planned, tallied);
        assert_eq!(counted, Some(planned));
    }
}
