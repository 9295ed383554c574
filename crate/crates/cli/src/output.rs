//! Files written by the commands.

use std::path::Path;

use hizfo_core::optimizer::records_to_csv;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::RunOutcome;

pub const CONFIG_FILE: &str = "config.txt";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const COST_FILE: &str = "cost_model.json";
pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_FILE: &str = "report.json";
pub const STEPS_FILE: &str = "steps.csv";

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Config, profile, plan, report and step records of one run.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, outcome: &RunOutcome) -> CliResult<()> {
    write_file(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    write_file(&dir.join(IMPORTANCE_FILE), &outcome.profile.to_csv())?;
    if let Some(plan) = &outcome.plan {
        write_file(&dir.join(PLAN_FILE), &plan.to_json())?;
    }
    write_file(&dir.join(REPORT_FILE), &outcome.report.to_json())?;
    write_file(&dir.join(STEPS_FILE), &records_to_csv(&outcome.report.records))
}
