//! `chemobranch` — run the particle, mean-field and PDE models and the
//! limit-theorem experiments from a config file.
//!
//! Exit codes: 0 ok, 2 config error, 3 runtime error, 4 acceptance-check
//! failure.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "chemobranch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (flat `key = value` text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// One run of the individual-based model.
    Micro,
    /// Deterministic density/field solve.
    Macro,
    /// Self-consistent field, then an ensemble of hybrid lines.
    Hybrid,
    /// Ensemble of mass-weighted particles, compared with the PDE.
    Mass,
    /// Hydrodynamic-limit experiment over `run.n0_list`.
    Converge,
    /// Pathwise coupling experiment over `run.n0_list`.
    Couple,
    /// Yule bound on the population size.
    Yule,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Micro => "micro",
            Command::Macro => "macro",
            Command::Hybrid => "hybrid",
            Command::Mass => "mass",
            Command::Converge => "converge",
            Command::Couple => "couple",
            Command::Yule => "yule",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let Some(path) = cli.config.as_ref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let cfg = match std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))
        .and_then(|t| chemobranch::config::ExperimentConfig::parse(&t).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run::run(cli.command, cfg, cli.seed, &cli.out) {
        Ok(run::Outcome::Pass) => ExitCode::SUCCESS,
        Ok(run::Outcome::CheckFailed(why)) => {
            eprintln!("check failed: {why}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
