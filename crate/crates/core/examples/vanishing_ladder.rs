//! Runs the vanishing-discount ladder at a coarse resolution and prints the
//! ergodic constant estimate, the Cauchy table of `V_bar` and the checks.

use mfg_weakkam::measure::{ProbePanel, TorusGrid};
use mfg_weakkam::mfg::SolveOptions;
use mfg_weakkam::model::ModelSpec;
use mfg_weakkam::vanishing::{convergence_report, run_ladder, LadderSettings};

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(32)?;
    let panel = ProbePanel::default_panel(grid)?;
    let settings = LadderSettings {
        deltas: vec![0.4, 0.2, 0.1, 0.05],
        solve: SolveOptions {
            dt: 0.01,
            ..SolveOptions::default()
        },
        ..LadderSettings::default()
    };
    let model = ModelSpec::default();

    let ladder = run_ladder(&model, &panel, &settings)?;
    let report = convergence_report(&panel, &ladder, &settings)?;
    print!("{}", report.render(&model.hash()));

    println!("per-probe ergodic constants:");
    for (name, l) in report.probes.iter().zip(&report.lambda.per_probe) {
        println!("  {name:<10} {l:.8}");
    }
    println!("all checks passed: {}", report.passed());
    Ok(())
}
