//! Solves one discounted mean field game and prints the value, the solver
//! history and the equilibrium at a few times.
//!
//! ```text
//! cargo run --release --example solve_value -- 0.2
//! ```

use mfg_weakkam::measure::{make_probe, ProbeSpec, TorusGrid};
use mfg_weakkam::mfg::{solve_discounted_mfg, SolveOptions};
use mfg_weakkam::model::ModelSpec;

fn main() -> mfg_weakkam::Result<()> {
    let delta: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let grid = TorusGrid::new(32)?;
    let m0 = make_probe(grid, &ProbeSpec::Bump { kappa: 4.0, center: 0.5 })?;
    let model = ModelSpec::default();
    let opts = SolveOptions {
        dt: 0.01,
        ..SolveOptions::default()
    };

    let (arc, report) = solve_discounted_mfg(&model, &m0, delta, &opts)?;
    println!("delta = {delta}, horizon = {:.2} ({} steps)", arc.horizon(), arc.time.n_steps);
    println!("converged = {} after {} iterations", report.converged, report.iterations);
    for (k, (r, v)) in report.residuals.iter().zip(&report.values).enumerate().step_by(10) {
        println!("  iter {k:>3}: residual {r:.3e}, value {v:.10}");
    }
    println!("V_delta(m0) = {:.10}", arc.value);
    println!("delta V_delta(m0) = {:.10}", delta * arc.value);

    for t in [0.0, 1.0, 5.0, 20.0] {
        let k = (t / arc.time.dt).round() as usize;
        let m = arc.measure(k);
        let peak = m.density().iter().cloned().fold(0.0, f64::max);
        println!("  t = {t:>4}: max density {peak:.4}, <cos 2 pi x> = {:+.4}", m.integrate(|x| (std::f64::consts::TAU * x).cos()));
    }
    Ok(())
}
