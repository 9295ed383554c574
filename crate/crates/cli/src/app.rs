//! Argument parsing and dispatch for the `hizfo` binary.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hizfo_core::verify::VerifyOptions;

use crate::commands;
use crate::config::ExperimentConfig;
use crate::error::{CliResult, EXIT_CONFIG, EXIT_OK};
use crate::sweep::{parse_values, Axis};

#[derive(Debug, Parser)]
#[command(name = "hizfo", version, about = "Hybrid first-order / zeroth-order optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file; defaults to the two-moons MLP experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Warm-up importance profile and FLOPs cost model.
    Profile(Common),
    /// Budgeted FO/ZO partition plan.
    Partition(Common),
    /// One training run: report JSON plus per-step CSV.
    Train(Common),
    /// Runs over a grid of one parameter, several seeds each.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rho, r or alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Numerical self-checks.
    Verify {
        /// Reduced Monte-Carlo budgets.
        #[arg(long)]
        fast: bool,
        /// Restore with the wrong sign (fault injection for the restore check).
        #[arg(long, hide = true)]
        inject_restore_fault: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize results found in an output directory.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::two_moons(),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> CliResult<String> {
    match command {
        Command::Profile(c) => {
            let cfg = c.load()?;
            commands::cmd_profile(&cfg, &cfg.run.out)
        }
        Command::Partition(c) => {
            let cfg = c.load()?;
            commands::cmd_partition(&cfg, &cfg.run.out).map(|(msg, _)| msg)
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            commands::cmd_train(&cfg, &cfg.run.out)
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.load()?;
            commands::cmd_sweep(&cfg, Axis::parse(&axis)?, &parse_values(&values)?, &cfg.run.out)
        }
        Command::Verify { fast, inject_restore_fault, out } => {
            commands::cmd_verify(VerifyOptions { fast, negate_on_restore: inject_restore_fault }, out.as_deref())
        }
        Command::Report { out } => commands::cmd_report(out.as_deref().unwrap_or(Path::new("runs"))),
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn run_app<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
