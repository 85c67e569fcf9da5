//! Compares undiscounted finite-horizon values, shifted by `lambda T`, with
//! the corrector estimated from the vanishing-discount ladder.

use mfg_weakkam::measure::{ProbePanel, TorusGrid};
use mfg_weakkam::mfg::SolveOptions;
use mfg_weakkam::model::ModelSpec;
use mfg_weakkam::vanishing::{convergence_report, long_time_check, run_ladder, CorrectorEstimate, LadderSettings};

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(32)?;
    let panel = ProbePanel::default_panel(grid)?;
    let model = ModelSpec::default();
    let solve = SolveOptions {
        dt: 0.01,
        ..SolveOptions::default()
    };
    let settings = LadderSettings {
        deltas: vec![0.4, 0.2, 0.1, 0.05],
        solve: solve.clone(),
        ..LadderSettings::default()
    };
    let ladder = run_ladder(&model, &panel, &settings)?;
    let est = CorrectorEstimate::from_report(&panel, &convergence_report(&panel, &ladder, &settings)?)?;

    let lt = long_time_check(&model, &panel, &solve, &[5.0, 10.0, 20.0], est.lambda, &est.chi.values)?;
    for (t, row) in lt.horizons.iter().zip(&lt.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.6e}")).collect();
        println!("T = {t:>5}: {}", cells.join("  "));
    }
    println!("gaps between horizons: {:?}", lt.gaps);
    println!("offsets to chi: {:?}", lt.offsets);
    println!("offset spread {:.3e}", lt.offset_spread);
    Ok(())
}
