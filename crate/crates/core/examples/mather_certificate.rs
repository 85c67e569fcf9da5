//! Builds the discounted occupation measure of one solved arc and certifies it
//! as a Mather-measure candidate: value identity, closedness over the test
//! battery, generator identity and smoothness constants.

use mfg_weakkam::measure::{make_probe, ProbeSpec, TorusGrid};
use mfg_weakkam::mfg::{solve_discounted_mfg, SolveOptions};
use mfg_weakkam::model::{functional_battery, GridModel, ModelSpec, TestFunctional, TrigPoly};
use mfg_weakkam::occupation::{
    build_occupation, closedness_residuals, generator_identity_residual, mather_value,
    smoothness_certificate,
};

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(32)?;
    let model = ModelSpec::default();
    let m0 = make_probe(grid, &ProbeSpec::TwoBump { kappa: 4.0, centers: [0.25, 0.75], weight: 0.3 })?;
    let opts = SolveOptions {
        dt: 0.01,
        ..SolveOptions::default()
    };

    for delta in [0.4, 0.2, 0.1] {
        let (arc, _) = solve_discounted_mfg(&model, &m0, delta, &opts)?;
        let target = delta * arc.value;
        let occ = build_occupation(arc)?;
        let mv = mather_value(&occ, &GridModel::new(&model, grid));
        let battery = functional_battery();
        let res = closedness_residuals(&occ, &battery)?;
        let (worst, name) = res
            .iter()
            .zip(&battery)
            .fold((0.0, ""), |acc, (r, f)| if *r > acc.0 { (*r, f.name.as_str()) } else { acc });
        let sq = TestFunctional::square("sq", TrigPoly::cos(1));
        let (gen, _) = generator_identity_residual(&occ, &sq)?;
        let s = smoothness_certificate(&occ);
        println!("delta = {delta}: {} atoms", occ.n_atoms());
        println!("  mather value {mv:.12} vs delta V {target:.12}");
        println!("  worst closedness {worst:.4e} ({name}), generator residual {gen:.3e}");
        println!("  density C2 {:.3}, drift C1 {:.3}", s.density_c2, s.drift_c1);
    }
    Ok(())
}
