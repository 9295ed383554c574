//! Self-verification suites.
//!
//! Each suite runs a numerical property check and reports a single
//! [`SuiteResult`]. The harness runs them all via [`run_all`]; the fast mode
//! shrinks Monte-Carlo and step budgets where the tolerance still holds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, TensorCost};
use crate::data::{char_windows, two_moons, Batch, ByteVocab, BUILTIN_CORPUS};
use crate::error::Result;
use crate::gradcheck::{check_gradients, FD_STEP};
use crate::importance::ImportanceProfile;
use crate::model::{LayeredModel, LossKind, MlpSpec, QuadraticBlock, RosenbrockSpec, TinyLmSpec};
use crate::optimizer::perturb::{add_scaled_noise, step_seed, NoiseMode};
use crate::optimizer::{train, Algorithm, OptimizerConfig, StepHooks};
use crate::partition::{apply_plan, brute_force_select, solve_dp};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Role;
use crate::theory::{
    bias_dimension_sweep, descent_check, loglog_fit, mean_zo_estimate, rate_experiment, second_moment, Objective,
    ProbeSampling, SweepObjective, TheoryRunSpec,
};

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_COORDS: usize = 100;
pub const UNBIASED_TOL: f64 = 0.01;
pub const UNBIASED_PROBES: usize = 100_000;
pub const BIAS_SLOPE_MIN: f64 = 0.8;
pub const SECOND_MOMENT_SLACK: f64 = 0.05;
pub const RESTORE_MAX_ULP: f64 = 4.0;
pub const RESTORE_MAX_DRIFT: f64 = 1e-9;
pub const RESTORE_STEPS: usize = 1000;
pub const DP_INSTANCES: usize = 200;
pub const DP_MAX_TENSORS: usize = 12;
pub const DP_BUCKETS: u64 = 100_000;
pub const DP_TOL: f64 = 1e-9;
pub const RATE_SLOPE_BAND: (f64, f64) = (-1.5, -0.3);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Reduced Monte-Carlo and step budgets.
    pub fast: bool,
    /// Fault injection: restore with `+eps u` instead of `-eps u`.
    pub negate_on_restore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    fn errored(name: &str, err: crate::Error) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

pub const SUITE_NAMES: [&str; 8] = [
    "gradcheck",
    "estimator_unbiased",
    "bias_scaling",
    "second_moment",
    "restore_exactness",
    "dp_oracle",
    "rate_band",
    "descent",
];

pub fn run_suite(name: &str, opts: VerifyOptions) -> Option<SuiteResult> {
    let r = match name {
        "gradcheck" => gradcheck_suite(opts),
        "estimator_unbiased" => estimator_unbiased_suite(opts),
        "bias_scaling" => bias_scaling_suite(opts),
        "second_moment" => second_moment_suite(opts),
        "restore_exactness" => restore_exactness_suite(opts),
        "dp_oracle" => dp_oracle_suite(opts),
        "rate_band" => rate_band_suite(opts),
        "descent" => descent_suite(opts),
        _ => return None,
    };
    Some(r)
}

pub fn run_all(opts: VerifyOptions) -> Vec<SuiteResult> {
    SUITE_NAMES.iter().filter_map(|n| run_suite(n, opts)).collect()
}

/// One small instance of each model kind with a matching batch.
pub fn model_zoo() -> Result<Vec<(LayeredModel, Batch)>> {
    let quad = LayeredModel::quadratic(vec![
        QuadraticBlock::uniform("q0", 6, 2.0),
        QuadraticBlock::uniform("q1", 4, 0.5).with_target(vec![0.3; 4]),
    ])?;
    let rosen = LayeredModel::rosenbrock(RosenbrockSpec::default())?;
    let mlp = LayeredModel::mlp(MlpSpec::new(vec![2, 16, 16, 2], LossKind::CrossEntropy))?;
    let vocab = ByteVocab::build(BUILTIN_CORPUS.as_bytes(), 32)?;
    let tokens = vocab.encode(BUILTIN_CORPUS.as_bytes());
    let lm_spec = TinyLmSpec { vocab: vocab.size(), ..TinyLmSpec::default() };
    let lm = LayeredModel::tiny_lm(lm_spec)?;
    Ok(vec![
        (quad, Batch::analytic()),
        (rosen, Batch::analytic()),
        (mlp, two_moons(32, 0.1, 11)?),
        (lm, char_windows(&tokens, lm_spec.context, 4, 12)?),
    ])
}

fn gradcheck_suite(_opts: VerifyOptions) -> SuiteResult {
    const NAME: &str = "gradcheck";
    let zoo = match model_zoo() {
        Ok(z) => z,
        Err(e) => return SuiteResult::errored(NAME, e),
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (model, batch)) in zoo.iter().enumerate() {
        let params = model.init_params(7 + i as u64);
        match check_gradients(model, &params, batch, GRADCHECK_COORDS, FD_STEP, 100 + i as u64) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error());
                parts.push(format!("{:?}={:.2e}", model.kind(), r.max_rel_error()));
            }
            Err(e) => return SuiteResult::errored(NAME, e),
        }
    }
    SuiteResult::new(NAME, worst <= GRADCHECK_TOL, format!("max rel err {worst:.2e} ({})", parts.join(", ")))
}

/// The 16-d quadratic used by the unbiasedness check and its evaluation point.
pub fn unbiased_fixture() -> (Objective, Vec<f64>) {
    let obj = Objective::DiagonalQuadratic { curvature: (0..16).map(|i| 1.0 + i as f64 / 8.0).collect() };
    let theta = (0..16).map(|i| 0.5 - i as f64 / 20.0).collect();
    (obj, theta)
}

fn relative_l2(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Relative L2 error of the Monte-Carlo mean of the estimator against the
/// analytic gradient, using orthogonal probe blocks.
pub fn unbiasedness_error(probes: usize, seed: u64) -> f64 {
    let (obj, theta) = unbiased_fixture();
    let m = mean_zo_estimate(&obj, &theta, 1e-3, probes, seed, ProbeSampling::OrthogonalBlocks);
    relative_l2(&m, &obj.gradient(&theta))
}

fn estimator_unbiased_suite(_opts: VerifyOptions) -> SuiteResult {
    let err = unbiasedness_error(UNBIASED_PROBES, 41);
    SuiteResult::new("estimator_unbiased", err <= UNBIASED_TOL, format!("relative error {:.3}% over {UNBIASED_PROBES} probes", 100.0 * err))
}

pub const BIAS_MUS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Log-log slope of `|E[g_hat] - grad|` against the smoothing parameter on
/// the 16-d quartic.
pub fn bias_slope(probes: usize, seed: u64) -> Result<f64> {
    let rows = bias_dimension_sweep(SweepObjective::Quartic, &[16], &BIAS_MUS, probes, seed);
    let mus: Vec<f64> = rows.iter().map(|r| r.mu).collect();
    let bias: Vec<f64> = rows.iter().map(|r| r.bias_sq.sqrt()).collect();
    Ok(loglog_fit(&mus, &bias)?.slope)
}

fn bias_scaling_suite(opts: VerifyOptions) -> SuiteResult {
    const NAME: &str = "bias_scaling";
    let probes = if opts.fast { 5_000 } else { 50_000 };
    match bias_slope(probes, 43) {
        Ok(s) => SuiteResult::new(NAME, s >= BIAS_SLOPE_MIN, format!("slope {s:.3} (need >= {BIAS_SLOPE_MIN})")),
        Err(e) => SuiteResult::errored(NAME, e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentRow {
    pub d_zo: usize,
    pub measured: f64,
    pub bound: f64,
}

/// Measured `E|g_hat|^2` against `2(d+1)|grad|^2 + sigma^2` at random points
/// of a diagonal quadratic. `sigma^2` is the estimator's second moment at the
/// minimiser, where the gradient vanishes and only the smoothing residue is left.
pub fn second_moment_rows(dims: &[usize], points: usize, probes: usize, seed: u64) -> Vec<SecondMomentRow> {
    let mu = 1e-3;
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::new();
    for &d in dims {
        let obj = Objective::DiagonalQuadratic { curvature: (0..d).map(|i| 0.5 + (i % 4) as f64 * 0.5).collect() };
        let floor = second_moment(&obj, &vec![0.0; d], mu, probes, derive_seed(seed, d as u64));
        for p in 0..points {
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g2: f64 = obj.gradient(&theta).iter().map(|g| g * g).sum();
            let measured = second_moment(&obj, &theta, mu, probes, derive_seed(seed, (d * 1000 + p) as u64));
            rows.push(SecondMomentRow { d_zo: d, measured, bound: 2.0 * (d as f64 + 1.0) * g2 + floor });
        }
    }
    rows
}

fn second_moment_suite(opts: VerifyOptions) -> SuiteResult {
    let probes = if opts.fast { 2_000 } else { 20_000 };
    let rows = second_moment_rows(&[4, 64], 5, probes, 47);
    let worst = rows.iter().map(|r| r.measured / r.bound).fold(0.0, f64::max);
    SuiteResult::new(
        "second_moment",
        worst <= 1.0 + SECOND_MOMENT_SLACK,
        format!("worst measured/bound ratio {worst:.3} over {} points", rows.len()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestoreAudit {
    pub steps: usize,
    /// Largest per-element deviation after restore, in ulps.
    pub max_ulp: f64,
    /// `|theta_zo - theta_zo_mirror| / |theta_zo_mirror|` at the end.
    pub relative_drift: f64,
}

/// Run Hi-ZFO on a two-moons MLP with the restore audit on, then replay the
/// recorded ZO updates on an unperturbed mirror copy of the ZO tensors and
/// compare. The difference is the residue left by perturb-then-restore.
pub fn restore_audit(steps: usize, negate_on_restore: bool, seed: u64) -> Result<RestoreAudit> {
    let model = LayeredModel::mlp(MlpSpec::new(vec![2, 16, 16, 2], LossKind::CrossEntropy))?;
    let mut params = model.init_params(seed);
    let batch = two_moons(64, 0.1, derive_seed(seed, 1))?;
    for name in ["dense1.weight", "dense0.weight", "dense0.bias"] {
        params.set_role(name, Role::Zo)?;
    }
    let cfg = OptimizerConfig {
        eta_fo: 0.05,
        eta_zo: 0.005,
        master_seed: seed,
        max_steps: steps,
        ..OptimizerConfig::default()
    };
    let hooks = StepHooks { audit_restore: true, negate_on_restore, ..StepHooks::default() };
    let mut mirror = params.clone();
    let zo_mask = params.role_mask(Role::Zo);
    let report = train(&model, &mut params, std::slice::from_ref(&batch), None, &cfg, Algorithm::Hizfo, hooks)?;
    let mut max_ulp: f64 = 0.0;
    for r in &report.records {
        max_ulp = max_ulp.max(r.restore_max_ulp);
        let seed = step_seed(cfg.master_seed, r.step);
        add_scaled_noise(&mut mirror, &zo_mask, seed, -cfg.eta_zo * r.zo_projected_grad, NoiseMode::Gaussian);
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for ((a, b), &zo) in params.iter().zip(mirror.iter()).zip(&zo_mask) {
        if zo {
            for (x, y) in a.data().iter().zip(b.data()) {
                diff += (x - y) * (x - y);
                norm += y * y;
            }
        }
    }
    Ok(RestoreAudit { steps: report.records.len(), max_ulp, relative_drift: (diff / norm).sqrt() })
}

fn restore_exactness_suite(opts: VerifyOptions) -> SuiteResult {
    const NAME: &str = "restore_exactness";
    let steps = if opts.fast { 200 } else { RESTORE_STEPS };
    match restore_audit(steps, opts.negate_on_restore, 53) {
        Ok(a) => SuiteResult::new(
            NAME,
            a.steps == steps && a.max_ulp <= RESTORE_MAX_ULP && a.relative_drift <= RESTORE_MAX_DRIFT,
            format!("{} steps, max deviation {} ulp, relative drift {:.2e}", a.steps, a.max_ulp, a.relative_drift),
        ),
        Err(e) => SuiteResult::errored(NAME, e),
    }
}

/// A random partition instance with integer costs small enough that one
/// budget bucket is one FLOP at `Q = 10^5`.
pub fn random_instance(n: usize, seed: u64) -> (ImportanceProfile, CostModel, f64) {
    let mut rng = rng_from_seed(seed);
    let names: Vec<String> = (0..n).map(|k| format!("t{k}")).collect();
    let tensors = (0..n)
        .map(|k| {
            let t_dw = rng.random_range(1..=1000);
            TensorCost { name: names[k].clone(), layer_index: k, t_fwd: t_dw, t_dw, t_dy: rng.random_range(0..=1000) }
        })
        .collect();
    let scores = (0..n).map(|_| rng.random_range(-0.2..1.0)).collect();
    let profile = ImportanceProfile::from_scores(names, (0..n).collect(), scores).expect("lengths match");
    let rho = rng.random_range(0.05..0.95);
    (profile, CostModel { batch_size: 1, tensors }, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpOracleSummary {
    pub instances: usize,
    pub mismatches: usize,
    pub worst_gap: f64,
}

/// Compare `solve_dp` against exhaustive enumeration on random instances.
pub fn dp_oracle(instances: usize, seed: u64) -> Result<DpOracleSummary> {
    let mut mismatches = 0;
    let mut worst_gap: f64 = 0.0;
    for i in 0..instances {
        let n = 1 + (i % DP_MAX_TENSORS);
        let (profile, cost, rho) = random_instance(n, derive_seed(seed, i as u64));
        let dp = solve_dp(&profile, &cost, rho, DP_BUCKETS)?;
        let bf = brute_force_select(&profile, &cost, rho)?;
        let gap = bf.achieved_importance - dp.achieved_importance;
        worst_gap = worst_gap.max(gap.abs());
        let within = dp.achieved_importance >= bf.achieved_importance - DP_TOL && dp.achieved_importance <= bf.achieved_importance + DP_TOL;
        if !within || dp.consumed_flops as f64 > dp.budget_flops {
            mismatches += 1;
        }
    }
    Ok(DpOracleSummary { instances, mismatches, worst_gap })
}

/// Planned cost against the FLOPs reported by a truncated backward pass and,
/// for the MLP, against the operation counter. Returns `(planned, tallied, counted)`.
pub fn cost_audit(rho: f64, seed: u64) -> Result<(u64, u64, Option<u64>)> {
    let model = LayeredModel::mlp(MlpSpec::new(vec![2, 32, 32, 32, 2], LossKind::CrossEntropy))?;
    let mut params = model.init_params(seed);
    let batch = two_moons(64, 0.1, derive_seed(seed, 2))?;
    let batches = crate::data::split_batches(&batch, 32)?;
    let warmup = crate::importance::WarmupConfig::default_for(model.kind());
    let profile = crate::importance::estimate_importance(&model, &mut params, &batches, warmup)?;
    let plan = solve_dp(&profile, &model.flops_profile(batch.size), rho, crate::partition::DEFAULT_BUCKETS)?;
    apply_plan(&mut params, &plan)?;
    let mask = params.role_mask(Role::Fo);
    let tape = model.forward_tape(&params, &batch)?;
    let tallied = model.backward(&params, &tape, &mask)?.backward_flops();
    let counted = model.counted_backward_flops(&params, &batch, &mask)?;
    Ok((plan.consumed_flops, tallied, counted))
}

fn dp_oracle_suite(opts: VerifyOptions) -> SuiteResult {
    const NAME: &str = "dp_oracle";
    let instances = if opts.fast { 50 } else { DP_INSTANCES };
    let summary = match dp_oracle(instances, 59) {
        Ok(s) => s,
        Err(e) => return SuiteResult::errored(NAME, e),
    };
    let audit = match cost_audit(0.6, 61) {
        Ok(a) => a,
        Err(e) => return SuiteResult::errored(NAME, e),
    };
    let audit_ok = audit.0 == audit.1 && audit.2.is_none_or(|c| c == audit.0);
    SuiteResult::new(
        NAME,
        summary.mismatches == 0 && audit_ok,
        format!(
            "{} mismatches in {} instances (worst gap {:.1e}); cost audit planned {} tallied {} counted {:?}",
            summary.mismatches, summary.instances, summary.worst_gap, audit.0, audit.1, audit.2
        ),
    )
}

fn rate_band_suite(opts: VerifyOptions) -> SuiteResult {
    const NAME: &str = "rate_band";
    let mut spec = TheoryRunSpec::noisy_quadratic();
    if opts.fast {
        spec.horizons = vec![100, 316, 1000, 3162];
        spec.seeds = 2;
    }
    let table = match rate_experiment(&spec) {
        Ok(t) => t,
        Err(e) => return SuiteResult::errored(NAME, e),
    };
    match table.fit {
        Some(fit) => {
            let (lo, hi) = RATE_SLOPE_BAND;
            SuiteResult::new(NAME, fit.slope >= lo && fit.slope <= hi, format!("slope {:.3} (band [{lo}, {hi}])", fit.slope))
        }
        None => SuiteResult::new(NAME, false, "no fit: a horizon diverged".into()),
    }
}

fn descent_suite(opts: VerifyOptions) -> SuiteResult {
    let (states, draws) = if opts.fast { (10, 200) } else { (40, 1000) };
    let c = descent_check(8, 8, 0.5, 0.05, 1e-3, 0.3, states, draws, 1e-9, 67);
    SuiteResult::new(
        "descent",
        c.violations == 0,
        format!("{} violations over {} states, worst gap {:.2e}", c.violations, c.states, c.worst_gap),
    )
}
