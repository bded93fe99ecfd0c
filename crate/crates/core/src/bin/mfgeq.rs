use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfg_equilibrium::runner::{exit_code, run, Command, RunOptions, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Riccati,
    Equilibrium,
    Bsde,
    MfSolve,
    Clearing,
    Invariance,
    All,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Riccati => Command::Stage(Stage::Riccati),
            Sub::Equilibrium => Command::Stage(Stage::Equilibrium),
            Sub::Bsde => Command::Stage(Stage::Bsde),
            Sub::MfSolve => Command::Stage(Stage::MfSolve),
            Sub::Clearing => Command::Stage(Stage::Clearing),
            Sub::Invariance => Command::Stage(Stage::Invariance),
            Sub::All => Command::All,
        }
    }
}

/// Runs pipeline stages of a mean-field equilibrium scenario.
#[derive(Debug, Parser)]
#[command(name = "mfgeq", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override, e.g. `--set eqg.factor.a=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides OUTPUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time in the manifest.
    #[arg(long)]
    record_timing: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let opts = RunOptions {
        config: cli.config,
        sets: cli.sets,
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out,
        record_timing: cli.record_timing,
    };
    let result = run(cli.command.into(), &opts);
    match &result {
        Ok(m) => {
            for s in &m.stages {
                let status = if s.passed { "pass" } else { "FAIL" };
                match &s.error {
                    Some(e) => eprintln!("{:<12} {status}  {e}", s.stage),
                    None => eprintln!("{:<12} {status}", s.stage),
                }
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
