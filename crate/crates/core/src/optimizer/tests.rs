use super::*;
use crate::data::two_moons;
use crate::model::{LossKind, MlpSpec, QuadraticBlock, RosenbrockSpec};

fn scalar_quadratic(theta: f64) -> (LayeredModel, ParamSet) {
    let model = LayeredModel::quadratic(vec![QuadraticBlock::isotropic("theta", 1).with_init(vec![theta])]).unwrap();
    let params = model.init_params(0);
    (model, params)
}

fn cfg(eta_fo: f64, eta_zo: f64) -> OptimizerConfig {
    OptimizerConfig { eta_fo, eta_zo, eps: 1e-3, alpha: 0.1, ..OptimizerConfig::default() }
}

fn mlp() -> (LayeredModel, ParamSet, Batch) {
    let model = LayeredModel::mlp(MlpSpec::new(vec![2, 8, 8, 2], LossKind::CrossEntropy)).unwrap();
    let params = model.init_params(7);
    (model, params, two_moons(32, 0.1, 3).unwrap())
}

fn hooks(noise: NoiseMode) -> StepHooks {
    StepHooks { noise, ..StepHooks::default() }
}

#[test]
fn forced_unit_probe_on_scalar_quadratic() {
    let (model, mut params) = scalar_quadratic(1.0);
    params.set_all_roles(Role::Zo);
    let mut opt = HybridOptimizer::new(cfg(0.1, 0.01)).unwrap().with_hooks(hooks(NoiseMode::Constant(1.0)));
    let r = opt.hizfo_step(&model, &mut params, &Batch::analytic(), 0).unwrap();
    assert_eq!(r.loss_fo, 0.5);
    assert_eq!(r.loss_zo, 1.001_f64 * 1.001 / 2.0);
    assert!((r.zo_projected_grad - 1.0005).abs() < 1e-12, "{}", r.zo_projected_grad);
    assert!((params.tensor(0).data()[0] - (1.0 - 0.01 * 1.0005)).abs() < 1e-14);
    assert_eq!(r.loss_total, r.loss_fo + 0.1 * r.loss_zo);
    assert_eq!(r.backward_flops, 0);
}

#[test]
fn zero_probe_leaves_zo_unchanged_and_scales_fo_gradient() {
    let (model, mut params, batch) = mlp();
    // Output layer FO, hidden layers ZO.
    for (i, t) in params.clone().iter().enumerate() {
        params.set_role(t.name(), if i < 2 { Role::Fo } else { Role::Zo }).unwrap();
    }
    let before = params.clone();
    let c = cfg(0.05, 0.01);
    let mut opt = HybridOptimizer::new(c.clone()).unwrap().with_hooks(hooks(NoiseMode::Zero));
    let r = opt.hizfo_step(&model, &mut params, &batch, 0).unwrap();
    assert_eq!(r.loss_zo, r.loss_fo);
    assert_eq!(r.zo_projected_grad, 0.0);
    for k in 2..params.len() {
        assert_eq!(params.tensor(k).data(), before.tensor(k).data());
    }
    let g = model.full_gradient(&before, &batch).unwrap();
    for k in 0..2 {
        for ((new, old), gk) in params.tensor(k).data().iter().zip(before.tensor(k).data()).zip(g.by_index(k).unwrap()) {
            let expected = old - c.eta_fo * (1.0 + c.alpha) * gk;
            assert!((new - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn alpha_zero_matches_frozen_subset() {
    let (model, mut params, batch) = mlp();
    for (i, t) in params.clone().iter().enumerate() {
        params.set_role(t.name(), if i < 2 { Role::Fo } else { Role::Zo }).unwrap();
    }
    let mut a = params.clone();
    let mut b = params.clone();
    let c = OptimizerConfig { alpha: 0.0, ..cfg(0.05, 0.01) };
    HybridOptimizer::new(c.clone()).unwrap().with_hooks(hooks(NoiseMode::Zero)).hizfo_step(&model, &mut a, &batch, 0).unwrap();
    HybridOptimizer::new(c).unwrap().frozen_subset_step(&model, &mut b, &batch, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn coupling_changes_the_fo_gradient() {
    let (model, mut params, batch) = mlp();
    for (i, t) in params.clone().iter().enumerate() {
        params.set_role(t.name(), if i < 2 { Role::Fo } else { Role::Zo }).unwrap();
    }
    let run = |alpha: f64| {
        let mut p = params.clone();
        let c = OptimizerConfig { alpha, eps: 0.05, ..cfg(1.0, 1e-9) };
        HybridOptimizer::new(c).unwrap().with_hooks(hooks(NoiseMode::Constant(1.0))).hizfo_step(&model, &mut p, &batch, 0).unwrap();
        p.tensor(0).data().to_vec()
    };
    let base = params.tensor(0).data();
    let fo_only: Vec<f64> = run(0.0).iter().zip(base).map(|(a, b)| a - b).collect();
    let coupled: Vec<f64> = run(0.1).iter().zip(base).map(|(a, b)| (a - b) / 1.1).collect();
    let diff: f64 = fo_only.iter().zip(&coupled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-8, "coupled and plain FO gradients coincide ({diff})");
}

#[test]
fn flops_follow_the_fo_set() {
    let (model, mut params, batch) = mlp();
    for (i, t) in params.clone().iter().enumerate() {
        params.set_role(t.name(), if i < 2 { Role::Fo } else { Role::Zo }).unwrap();
    }
    let cost = model.flops_profile(batch.size);
    let fo_cost = cost.backward_flops(&params.role_mask(Role::Fo));
    let mut opt = HybridOptimizer::new(cfg(0.01, 0.001)).unwrap();
    let r = opt.hizfo_step(&model, &mut params, &batch, 0).unwrap();
    assert_eq!(r.backward_flops, 2 * fo_cost);
    assert_eq!(r.forward_flops, 2 * cost.forward_flops());
    let mut opt = HybridOptimizer::new(OptimizerConfig { alpha: 0.0, ..cfg(0.01, 0.001) }).unwrap();
    assert_eq!(opt.hizfo_step(&model, &mut params, &batch, 1).unwrap().backward_flops, fo_cost);
}

#[test]
fn full_fo_sgd_on_quadratic() {
    let (model, mut params) = scalar_quadratic(1.0);
    let mut opt = HybridOptimizer::new(cfg(0.1, 0.1)).unwrap();
    let r = opt.full_fo_step(&model, &mut params, &Batch::analytic(), 0).unwrap();
    assert!((params.tensor(0).data()[0] - 0.9).abs() < 1e-15);
    assert_eq!(r.loss_zo, 0.0);
    assert_eq!(r.zo_est_norm, 0.0);
}

#[test]
fn full_fo_rosenbrock_minimum_is_fixed() {
    let model = LayeredModel::rosenbrock(RosenbrockSpec { init: (1.0, 1.0), ..RosenbrockSpec::default() }).unwrap();
    let mut params = model.init_params(0);
    let before = params.clone();
    HybridOptimizer::new(cfg(1e-3, 1e-3)).unwrap().full_fo_step(&model, &mut params, &Batch::analytic(), 0).unwrap();
    assert_eq!(params, before);
}

#[test]
fn full_fo_step_descends_on_mlp() {
    let (model, mut params, batch) = mlp();
    let before = model.forward(&params, &batch).unwrap();
    HybridOptimizer::new(cfg(0.05, 0.01)).unwrap().full_fo_step(&model, &mut params, &batch, 0).unwrap();
    assert!(model.forward(&params, &batch).unwrap() < before);
}

#[test]
fn frozen_subset_leaves_zo_untouched_and_full_plan_matches_full_fo() {
    let (model, mut params, batch) = mlp();
    let mut full = params.clone();
    let mut opt = HybridOptimizer::new(cfg(0.05, 0.01)).unwrap();
    opt.frozen_subset_step(&model, &mut params, &batch, 0).unwrap();
    HybridOptimizer::new(cfg(0.05, 0.01)).unwrap().full_fo_step(&model, &mut full, &batch, 0).unwrap();
    assert_eq!(params, full);

    let (model, mut params, batch) = mlp();
    params.set_role("dense0.weight", Role::Zo).unwrap();
    let before = params.clone();
    HybridOptimizer::new(cfg(0.05, 0.01)).unwrap().frozen_subset_step(&model, &mut params, &batch, 0).unwrap();
    assert_eq!(params.get("dense0.weight"), before.get("dense0.weight"));
    assert_ne!(params.get("dense2.weight"), before.get("dense2.weight"));
}

#[test]
fn mezo_is_exact_on_quadratic_and_zero_probe_is_noop() {
    let (model, mut params) = scalar_quadratic(1.0);
    let mut opt = HybridOptimizer::new(cfg(0.1, 0.01)).unwrap().with_hooks(hooks(NoiseMode::Constant(1.0)));
    let r = opt.mezo_step(&model, &mut params, &Batch::analytic(), 0).unwrap();
    assert!((r.zo_projected_grad - 1.0).abs() < 1e-12);
    assert_eq!(r.backward_flops, 0);

    let (model, mut params) = scalar_quadratic(1.0);
    let mut opt = HybridOptimizer::new(cfg(0.1, 0.01)).unwrap().with_hooks(hooks(NoiseMode::Zero));
    opt.mezo_step(&model, &mut params, &Batch::analytic(), 0).unwrap();
    assert_eq!(params.tensor(0).data(), &[1.0]);
}

#[test]
fn non_finite_probe_reports_divergence_and_restores() {
    let model = LayeredModel::isotropic_quadratic(3).unwrap();
    let mut params = model.init_params(0);
    params.tensor_mut(0).data_mut().fill(0.0);
    params.set_all_roles(Role::Zo);
    let mut opt = HybridOptimizer::new(cfg(0.1, 0.1)).unwrap().with_hooks(hooks(NoiseMode::Constant(1e200)));
    let err = opt.hizfo_step(&model, &mut params, &Batch::analytic(), 5).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 5, .. }), "{err}");
    assert_eq!(params.tensor(0).data(), &[0.0; 3]);
}

#[test]
fn negated_restore_is_detected_by_the_audit() {
    let (model, mut params, batch) = mlp();
    params.set_all_roles(Role::Zo);
    let audit = StepHooks { audit_restore: true, ..StepHooks::default() };
    let mut good = params.clone();
    let r = HybridOptimizer::new(cfg(0.01, 0.001)).unwrap().with_hooks(audit).hizfo_step(&model, &mut good, &batch, 0).unwrap();
    assert!(r.restore_max_ulp <= 4.0);
    let bad = StepHooks { negate_on_restore: true, ..audit };
    let r = HybridOptimizer::new(cfg(0.01, 0.001)).unwrap().with_hooks(bad).hizfo_step(&model, &mut params, &batch, 0).unwrap();
    assert!(r.restore_max_ulp > 1e6);
}

#[test]
fn training_is_deterministic_and_zero_steps_is_empty() {
    let (model, params, batch) = mlp();
    let c = OptimizerConfig { max_steps: 20, eval_interval: 5, ..cfg(0.05, 0.005) };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut p = params.clone();
        p.set_role("dense0.weight", Role::Zo).unwrap();
        let mut r = train(&model, &mut p, std::slice::from_ref(&batch), Some(&batch), &c, Algorithm::Hizfo, StepHooks::default()).unwrap();
        for rec in &mut r.records {
            rec.wall_ns = 0;
        }
        runs.push((r, p));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].0.to_json(), runs[1].0.to_json());
    assert_eq!(runs[0].0.eval.len(), 4);

    let mut p = params.clone();
    let c0 = OptimizerConfig { max_steps: 0, ..c };
    let r = train(&model, &mut p, std::slice::from_ref(&batch), None, &c0, Algorithm::Hizfo, StepHooks::default()).unwrap();
    assert!(r.records.is_empty());
    assert!(!r.diverged);
    assert_eq!(records_to_csv(&r.records), format!("{STEP_CSV_HEADER}\n"));
}

#[test]
fn invalid_config_rejected() {
    assert!(HybridOptimizer::new(OptimizerConfig { eps: 0.0, ..OptimizerConfig::default() }).is_err());
    assert!(HybridOptimizer::new(OptimizerConfig { alpha: -1.0, ..OptimizerConfig::default() }).is_err());
    assert!(HybridOptimizer::new(OptimizerConfig { eta_zo: 0.0, ..OptimizerConfig::default() }).is_err());
}

#[test]
fn default_hyperparameters() {
    let c = OptimizerConfig::default();
    assert_eq!((c.eps, c.alpha, c.eta_fo, c.eta_zo), (1e-3, 0.1, 2e-5, 2e-6));
}
