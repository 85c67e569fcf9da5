//! Library equivalent of `mfg-lab <command> --config <file>`: parses a JSON
//! configuration, runs the command and lists the written artifacts.
//!
//! ```text
//! cargo run --release --example run_experiment -- crates/core/configs/quick.json ladder
//! ```

use std::path::PathBuf;

use mfg_weakkam::config::{parse_config, Command, RunConfig};
use mfg_weakkam::run::{exit_code, run, RunOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next() {
        Some(path) => parse_config(&PathBuf::from(path)).unwrap_or_else(|e| {
            eprintln!("{e}");
            std::process::exit(1);
        }),
        None => {
            let mut c = RunConfig::default();
            c.discretization.n_cells = 16;
            c.discretization.dt = 0.02;
            c
        }
    };
    let command = match args.next().as_deref() {
        Some("ladder") => Command::Ladder,
        Some("certify") => Command::Certify,
        Some("dpp") => Command::Dpp,
        Some("full") => Command::Full,
        _ => Command::Solve,
    };
    cfg.output.dir = std::env::temp_dir().join("mfg-lab-example");
    println!("config hash {}", cfg.hash());

    let result = run(&cfg, command, &RunOptions::default());
    match &result {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{}", c.render());
            }
            println!("artifacts in {}", outcome.out_dir.display());
        }
        Err(e) => eprintln!("{e}"),
    }
    std::process::exit(exit_code(&result));
}
