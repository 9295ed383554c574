//! Parameter sweeps over `rho`, the rate ratio `r = eta_zo / eta_fo`, or `alpha`.
//!
//! Runs execute on a rayon pool. Each run writes its own directory; the
//! aggregate tables are assembled afterwards in submission order, so the
//! output does not depend on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{run, RunOutcome};
use crate::output::write_run;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "HZFO_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rho,
    R,
    Alpha,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::R => "r",
            Axis::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "rho" => Ok(Axis::Rho),
            "r" => Ok(Axis::R),
            "alpha" => Ok(Axis::Alpha),
            other => Err(CliError::config(format!("unknown sweep axis {other} (expected rho, r or alpha)"))),
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            Axis::Rho => cfg.partition.rho = value,
            Axis::R => cfg.optimizer.eta_zo = value * cfg.optimizer.eta_fo,
            Axis::Alpha => cfg.optimizer.alpha = value,
        }
        cfg
    }
}

pub fn parse_values(s: &str) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| CliError::config(format!("bad sweep value {v:?}"))))
        .collect::<CliResult<_>>()?;
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub final_eval_loss: Option<f64>,
    pub diverged: bool,
    pub steps_completed: usize,
    pub total_backward_flops: u64,
}

impl SweepRow {
    /// Final eval loss, infinite for a diverged run.
    pub fn score(&self) -> f64 {
        match (self.diverged, self.final_eval_loss) {
            (false, Some(l)) => l,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: usize,
    pub diverged: usize,
    pub median_eval_loss: f64,
    pub mean_backward_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    pub points: Vec<SweepPoint>,
}

/// Median with infinities (divergence) ordered last.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SweepResult {
    pub fn scores_at(&self, value: f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.value == value).map(SweepRow::score).collect()
    }

    pub fn rows_csv(&self) -> String {
        let mut s = format!("{},seed,final_eval_loss,diverged,steps,bwd_flops\n", self.axis.as_str());
        for r in &self.rows {
            let loss = r.final_eval_loss.map_or_else(|| "nan".to_string(), |l| format!("{l:e}"));
            writeln!(s, "{},{},{},{},{},{}", r.value, r.seed, loss, r.diverged, r.steps_completed, r.total_backward_flops).unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{},runs,diverged,median_eval_loss,mean_bwd_flops\n", self.axis.as_str());
        for p in &self.points {
            writeln!(s, "{},{},{},{:e},{:e}", p.value, p.runs, p.diverged, p.median_eval_loss, p.mean_backward_flops).unwrap();
        }
        s
    }
}

/// Worker count: available cores, capped by `HZFO_THREADS` when set.
pub fn worker_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cores.min(cap),
        _ => cores,
    }
}

fn pool() -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))
}

/// Run independent configs on the worker pool; results keep input order.
pub fn run_many(cfgs: &[ExperimentConfig]) -> CliResult<Vec<RunOutcome>> {
    pool()?.install(|| cfgs.par_iter().map(run).collect())
}

fn run_dir(root: &Path, axis: Axis, value: f64, seed: u64) -> PathBuf {
    root.join(format!("{}={value}", axis.as_str())).join(format!("seed={seed}"))
}

/// One run per value per seed (`run.seed .. run.seed + run.seeds`). When
/// `out` is given, each run's report and step CSV go to its own directory.
pub fn run_sweep(base: &ExperimentConfig, axis: Axis, values: &[f64], out: Option<&Path>) -> CliResult<SweepResult> {
    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..base.run.seeds as u64).map(move |s| (v, base.run.seed + s)))
        .collect();
    for &v in values {
        axis.apply(base, v).validate()?;
    }
    let outcomes: Vec<CliResult<RunOutcome>> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(value, seed)| {
                let mut cfg = axis.apply(base, value);
                cfg.run.seed = seed;
                let outcome = run(&cfg)?;
                if let Some(root) = out {
                    write_run(&run_dir(root, axis, value, seed), &cfg, &outcome)?;
                }
                Ok(outcome)
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for (&(value, seed), outcome) in jobs.iter().zip(outcomes) {
        let r = outcome?.report;
        rows.push(SweepRow {
            value,
            seed,
            final_eval_loss: r.final_eval_loss,
            diverged: r.diverged,
            steps_completed: r.steps_completed,
            total_backward_flops: r.total_backward_flops,
        });
    }
    let points = values
        .iter()
        .map(|&value| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value).collect();
            let scores: Vec<f64> = at.iter().map(|r| r.score()).collect();
            SweepPoint {
                value,
                runs: at.len(),
                diverged: at.iter().filter(|r| r.diverged).count(),
                median_eval_loss: median(&scores),
                mean_backward_flops: at.iter().map(|r| r.total_backward_flops as f64).sum::<f64>() / at.len() as f64,
            }
        })
        .collect();
    Ok(SweepResult { axis, rows, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_set_the_right_field() {
        let base = ExperimentConfig::two_moons();
        assert_eq!(Axis::Rho.apply(&base, 0.3).partition.rho, 0.3);
        assert!((Axis::R.apply(&base, 0.5).optimizer.eta_zo - 0.35).abs() < 1e-15);
        assert_eq!(Axis::Alpha.apply(&base, 0.0).optimizer.alpha, 0.0);
        assert!(Axis::parse("beta").is_err());
    }

    #[test]
    fn median_orders_divergence_last() {
        assert_eq!(median(&[3.0, f64::INFINITY, 1.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn values_parse() {
        assert_eq!(parse_values("0.1, 0.5,1").unwrap(), vec![0.1, 0.5, 1.0]);
        assert!(parse_values("0.1,x").is_err());
    }

    #[test]
    fn small_sweep_is_ordered_and_complete() {
        let mut base = ExperimentConfig::two_moons();
        base.model.dims = vec![2, 8, 2];
        base.optimizer.max_steps = 5;
        base.run.seeds = 2;
        let res = run_sweep(&base, Axis::Alpha, &[0.0, 0.1], None).unwrap();
        let order: Vec<(f64, u64)> = res.rows.iter().map(|r| (r.value, r.seed)).collect();
        assert_eq!(order, vec![(0.0, 0), (0.0, 1), (0.1, 0), (0.1, 1)]);
        assert_eq!(res.points.len(), 2);
        assert!(res.points.iter().all(|p| p.runs == 2));
    }
}
