//! Subcommand bodies. Each returns the text to print; files go under `out`.

use std::fmt::Write as _;
use std::path::Path;

use hizfo_core::optimizer::StepHooks;
use hizfo_core::verify::{run_all, SuiteResult, VerifyOptions};
use hizfo_core::{PartitionPlan, RunReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{build_workload, plan, profile, run_with_hooks};
use crate::output::{read_file, write_file, write_run, COST_FILE, IMPORTANCE_FILE, PLAN_FILE, REPORT_FILE};
use crate::sweep::{run_sweep, Axis};

pub fn cmd_profile(cfg: &ExperimentConfig, out: &Path) -> CliResult<String> {
    let w = build_workload(cfg)?;
    let p = profile(cfg, &w)?;
    write_file(&out.join(IMPORTANCE_FILE), &p.to_csv())?;
    write_file(&out.join(COST_FILE), &w.cost_model().to_json())?;
    Ok(format!("profiled {} tensors into {}", p.len(), out.display()))
}

pub fn cmd_partition(cfg: &ExperimentConfig, out: &Path) -> CliResult<(String, PartitionPlan)> {
    let w = build_workload(cfg)?;
    let p = profile(cfg, &w)?;
    let plan = plan(cfg, &p, &w.cost_model())?;
    write_file(&out.join(PLAN_FILE), &plan.to_json())?;
    let mut msg = format!(
        "rho {}: {} FO / {} ZO tensors, {} of {:.0} budget FLOPs (T_full {}), importance {:.4}",
        plan.rho,
        plan.fo.len(),
        plan.zo.len(),
        plan.consumed_flops,
        plan.budget_flops,
        plan.t_full,
        plan.achieved_importance
    );
    if let Some(w) = &plan.warning {
        write!(msg, "\nwarning: {w}").unwrap();
    }
    Ok((msg, plan))
}

/// Train once; a diverged run still writes its files, then reports
/// [`CliError::Diverged`].
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<String> {
    let outcome = run_with_hooks(cfg, StepHooks::default())?;
    write_run(out, cfg, &outcome)?;
    let r = &outcome.report;
    if r.diverged {
        return Err(CliError::Diverged(r.divergence.clone().unwrap_or_default()));
    }
    Ok(summarize_report(r))
}

pub fn cmd_sweep(cfg: &ExperimentConfig, axis: Axis, values: &[f64], out: &Path) -> CliResult<String> {
    let res = run_sweep(cfg, axis, values, Some(&out.join(format!("sweep_{}", axis.as_str()))))?;
    write_file(&out.join(format!("sweep_{}.csv", axis.as_str())), &res.rows_csv())?;
    let summary = res.summary_csv();
    write_file(&out.join(format!("sweep_{}_summary.csv", axis.as_str())), &summary)?;
    Ok(summary)
}

pub fn format_suites(results: &[SuiteResult]) -> String {
    let mut s = String::new();
    for r in results {
        writeln!(s, "{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail).unwrap();
    }
    s
}

/// All verification suites; a failing suite turns into exit code 3.
pub fn cmd_verify(opts: VerifyOptions, out: Option<&Path>) -> CliResult<String> {
    let results = run_all(opts);
    let text = format_suites(&results);
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&results).expect("suite results serialize");
        write_file(&dir.join("verify.json"), &json)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Verification(failed.join(", ")))
    }
}

pub fn summarize_report(r: &RunReport) -> String {
    let mut s = String::new();
    writeln!(s, "algorithm            {}", r.algorithm.as_str()).unwrap();
    writeln!(s, "steps                {}", r.steps_completed).unwrap();
    match &r.divergence {
        Some(d) => writeln!(s, "diverged             {d}").unwrap(),
        None => writeln!(s, "diverged             no").unwrap(),
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    writeln!(s, "final train loss     {}", fmt(r.final_train_loss)).unwrap();
    writeln!(s, "final eval loss      {}", fmt(r.final_eval_loss)).unwrap();
    writeln!(s, "backward FLOPs       {} (T_full {} per step)", r.total_backward_flops, r.t_full).unwrap();
    writeln!(s, "forward FLOPs        {}", r.total_forward_flops).unwrap();
    writeln!(s, "FO / ZO tensors      {} / {}", r.fo_tensors.len(), r.zo_tensors.len()).unwrap();
    write!(s, "{:<20} {} (tape {} + optimizer state {})", r.memory_proxy.label, r.memory_proxy.total, r.memory_proxy.tape_params, r.memory_proxy.optimizer_state).unwrap();
    s
}

/// Summarize whatever results sit in `dir`: a run report, a plan and any
/// sweep summaries.
pub fn cmd_report(dir: &Path) -> CliResult<String> {
    let mut s = String::new();
    let report_path = dir.join(REPORT_FILE);
    if report_path.exists() {
        let r: RunReport = serde_json::from_str(&read_file(&report_path)?)
            .map_err(|e| CliError::config(format!("{}: {e}", report_path.display())))?;
        writeln!(s, "== run ==\n{}", summarize_report(&r)).unwrap();
    }
    let plan_path = dir.join(PLAN_FILE);
    if plan_path.exists() {
        let p = PartitionPlan::from_json(&read_file(&plan_path)?)?;
        writeln!(s, "== plan ==\nrho {}  FO {:?}\nconsumed {} of budget {:.0}", p.rho, p.fo, p.consumed_flops, p.budget_flops).unwrap();
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("sweep_") && n.ends_with("_summary.csv")))
        .collect();
    entries.sort();
    for path in entries {
        writeln!(s, "== {} ==\n{}", path.file_name().unwrap().to_string_lossy(), read_file(&path)?.trim_end()).unwrap();
    }
    if s.is_empty() {
        return Err(CliError::config(format!("no results found in {}", dir.display())));
    }
    Ok(s.trim_end().to_string())
}
