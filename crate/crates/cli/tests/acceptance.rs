//! Acceptance criteria, one line each. Runs as a plain binary so that the
//! lines are printed whether or not a criterion fails; the process exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use hizfo_cli::sweep::median;
use hizfo_cli::{run_many, ExperimentConfig, RunOutcome};
use hizfo_core::verify::{run_suite, VerifyOptions};
use hizfo_core::Algorithm;

const SEEDS: u64 = 5;
const R_VALUES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const RHO: f64 = 0.6;

struct Line {
    id: usize,
    passed: bool,
    text: String,
}

fn suite(id: usize, title: &str, name: &str, limit: Option<Duration>) -> Line {
    let start = Instant::now();
    let r = run_suite(name, VerifyOptions::default()).expect("known suite");
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let budget = limit.map_or_else(String::new, |l| format!(", {:.1}s of {}s", took.as_secs_f64(), l.as_secs()));
    Line { id, passed: r.passed && in_time, text: format!("{title}: {}{budget}", r.detail) }
}

fn scores(outcomes: &[RunOutcome]) -> Vec<f64> {
    outcomes.iter().map(|o| o.report.score()).collect()
}

fn fmt_scores(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

/// Configs for every two-moons arm, `SEEDS` runs each, in a fixed order.
fn two_moons_arms() -> Vec<(String, ExperimentConfig)> {
    let base = ExperimentConfig::two_moons();
    let mut arms = Vec::new();
    for r in R_VALUES {
        let mut c = base.clone();
        c.optimizer.eta_zo = r * c.optimizer.eta_fo;
        arms.push((format!("r={r}"), c));
    }
    let mut mezo = base.clone();
    mezo.algorithm = Algorithm::Mezo;
    arms.push(("mezo".into(), mezo));
    let mut frozen = base.clone();
    frozen.algorithm = Algorithm::FrozenSubset;
    arms.push(("frozen".into(), frozen));
    let mut a0 = base.clone();
    a0.optimizer.alpha = 0.0;
    arms.push(("alpha=0".into(), a0));
    let mut out = Vec::new();
    for (name, cfg) in arms {
        for s in 0..SEEDS {
            let mut c = cfg.clone();
            c.run.seed = s;
            out.push((name.clone(), c));
        }
    }
    out
}

fn arm<'a>(all: &'a [(String, RunOutcome)], name: &str) -> Vec<&'a RunOutcome> {
    all.iter().filter(|(n, _)| n == name).map(|(_, o)| o).collect()
}

fn arm_scores(all: &[(String, RunOutcome)], name: &str) -> Vec<f64> {
    scores(&arm(all, name).into_iter().cloned().collect::<Vec<_>>())
}

fn two_moons_lines() -> Vec<Line> {
    let arms = two_moons_arms();
    let cfgs: Vec<ExperimentConfig> = arms.iter().map(|(_, c)| c.clone()).collect();
    let outcomes = run_many(&cfgs).expect("two-moons runs");
    let all: Vec<(String, RunOutcome)> = arms.into_iter().map(|(n, _)| n).zip(outcomes).collect();

    let hz = arm_scores(&all, "r=0.1");
    let hz_med = median(&hz);
    let mezo = arm_scores(&all, "mezo");
    let frozen = arm_scores(&all, "frozen");
    let a0 = arm_scores(&all, "alpha=0");
    let mut lines = Vec::new();

    let wins = hz.iter().zip(&mezo).filter(|(h, m)| h < m).count();
    lines.push(Line {
        id: 8,
        passed: wins >= 4,
        text: format!("superiority over pure ZO: Hi-ZFO lower on {wins}/5 seeds (need >= 4); hizfo [{}] mezo [{}]", fmt_scores(&hz), fmt_scores(&mezo)),
    });

    let fz_med = median(&frozen);
    lines.push(Line {
        id: 9,
        passed: hz_med <= fz_med,
        text: format!("superiority over frozen subset: median {hz_med:.4} vs {fz_med:.4}; frozen [{}]", fmt_scores(&frozen)),
    });

    let mut meds = Vec::new();
    let mut unstable = Vec::new();
    for r in R_VALUES {
        let s = arm_scores(&all, &format!("r={r}"));
        meds.push((r, median(&s)));
        if r >= 0.7 {
            unstable.extend(s.iter().copied().filter(|&x| !x.is_finite() || x >= 2.0 * hz_med));
        }
    }
    let beats = meds.iter().filter(|(r, _)| *r >= 0.7).all(|(_, m)| hz_med < *m);
    let table = meds.iter().map(|(r, m)| format!("r={r}: {m:.4}")).collect::<Vec<_>>().join(", ");
    lines.push(Line {
        id: 10,
        passed: beats && !unstable.is_empty(),
        text: format!(
            "rate-ratio instability: medians {table}; {} run(s) at r >= 0.7 diverged or >= 2x the r=0.1 median",
            unstable.len()
        ),
    });

    let a0_med = median(&a0);
    lines.push(Line {
        id: 11,
        passed: hz_med <= a0_med,
        text: format!("ZO-loss weight ablation: alpha=0.1 median {hz_med:.4} <= alpha=0 median {a0_med:.4}; alpha=0 [{}]", fmt_scores(&a0)),
    });
    lines
}

/// Largest per-step backward FLOPs of a short Hi-ZFO run at `rho = 0.6`,
/// against `0.6 T_full` plus one budget bucket.
fn flops_budget_line() -> Line {
    let mut parts = Vec::new();
    let mut passed = true;
    let mut lm = ExperimentConfig::tiny_lm();
    lm.optimizer.max_steps = 5;
    let mut mlp = ExperimentConfig::two_moons();
    mlp.optimizer.max_steps = 5;
    for (name, mut cfg) in [("tiny_lm", lm), ("mlp", mlp)] {
        cfg.partition.rho = RHO;
        let out = hizfo_cli::run(&cfg).expect("budget run");
        let plan = out.plan.expect("hizfo run has a plan");
        let bound = RHO * plan.t_full as f64 + plan.bucket_flops as f64;
        let per_step = out.report.records.iter().map(|r| r.backward_flops).max().unwrap_or(0);
        passed &= per_step as f64 <= bound;
        parts.push(format!(
            "{name}: per step {per_step} vs bound {bound:.0} (T_full {}, per backward pass {})",
            plan.t_full, plan.consumed_flops
        ));
    }
    Line { id: 12, passed, text: format!("FLOPs budget at rho=0.6, alpha=0.1: {}", parts.join("; ")) }
}

fn main() {
    let start = Instant::now();
    let mut lines = vec![
        suite(1, "gradient correctness (4 model kinds, 100 coords, rel err <= 1e-5)", "gradcheck", Some(Duration::from_secs(30))),
        suite(2, "ZO estimator unbiasedness (16-d quadratic, 1e5 probes, <= 1%)", "estimator_unbiased", Some(Duration::from_secs(10))),
        suite(3, "bias scaling on sum theta^4 (slope >= 0.8)", "bias_scaling", None),
        suite(4, "second-moment bound (d in {4, 64}, 5% slack)", "second_moment", None),
        suite(5, "restore exactness (1000 steps, <= 4 ulp, drift <= 1e-9)", "restore_exactness", None),
        suite(6, "DP oracle equivalence (200 instances, N <= 12, Q = 1e5) and cost audit", "dp_oracle", Some(Duration::from_secs(60))),
        suite(7, "convergence-rate band (slope in [-1.5, -0.3])", "rate_band", Some(Duration::from_secs(120))),
    ];
    lines.extend(two_moons_lines());
    lines.push(flops_budget_line());

    for l in &lines {
        println!("criterion {:>2} {} {}", l.id, if l.passed { "PASS" } else { "FAIL" }, l.text);
    }
    let failed: Vec<String> = lines.iter().filter(|l| !l.passed).map(|l| l.id.to_string()).collect();
    println!("acceptance: {}/{} passed in {:.1}s", lines.len() - failed.len(), lines.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
