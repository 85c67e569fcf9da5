//! Checks the dynamic programming principle along a solved arc: restarting
//! from `m(t)` must reproduce the tail of the value.

use mfg_weakkam::measure::{make_probe, ProbeSpec, TorusGrid};
use mfg_weakkam::mfg::{dpp_residual, finite_horizon_value, solve_discounted_mfg, SolveOptions};
use mfg_weakkam::model::ModelSpec;

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(32)?;
    let model = ModelSpec::default();
    let m0 = make_probe(grid, &ProbeSpec::Cosine { amplitude: 0.5 })?;

    for dt in [0.01, 0.005] {
        let opts = SolveOptions {
            dt,
            ..SolveOptions::default()
        };
        let (arc, _) = solve_discounted_mfg(&model, &m0, 0.2, &opts)?;
        for t in [0.5, 1.0, 2.0] {
            let (r, _) = dpp_residual(&model, &arc, t, &opts)?;
            println!("dt = {dt}, t = {t}: residual {r:.3e}");
        }
    }

    let opts = SolveOptions {
        dt: 0.01,
        ..SolveOptions::default()
    };
    for horizon in [1.0, 2.0, 4.0] {
        let (arc, _) = finite_horizon_value(&model, &m0, horizon, &opts)?;
        println!("undiscounted U^T(0, m0) at T = {horizon}: {:.8}", arc.value);
    }
    Ok(())
}
