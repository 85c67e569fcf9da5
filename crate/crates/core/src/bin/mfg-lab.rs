use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfg_weakkam::config::{parse_config, Command, RunConfig};
use mfg_weakkam::run::{exit_code, run, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Solve,
    Ladder,
    Certify,
    Dpp,
    Full,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::Ladder => Command::Ladder,
            Cmd::Certify => Command::Certify,
            Cmd::Dpp => Command::Dpp,
            Cmd::Full => Command::Full,
        }
    }
}

/// Vanishing-discount experiments for potential mean field games on the circle.
///
/// Exit status: 0 when every check passes, 2 when some check fails (artifacts
/// are still written), 1 on errors.
#[derive(Debug, Parser)]
#[command(name = "mfg-lab", version)]
struct Cli {
    /// Experiment to run; defaults to `experiment.command` of the config.
    #[arg(value_enum)]
    command: Option<Cmd>,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed of the random drift samples, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => match parse_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("mfg-lab: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let command = cli.command.map(Command::from).unwrap_or(cfg.experiment.command);
    let opts = RunOptions {
        jobs: cli.jobs,
        quiet: cli.quiet,
    };
    let result = run(&cfg, command, &opts);
    match &result {
        Ok(o) => {
            for c in o.failures() {
                eprintln!("mfg-lab: {}", c.render());
            }
        }
        Err(e) => eprintln!("mfg-lab: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
