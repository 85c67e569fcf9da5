//! W1 distances between the default probes on the circle.

use mfg_weakkam::measure::{w1_distance, GridMeasure, ProbePanel, TorusGrid};

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(64)?;
    let panel = ProbePanel::default_panel(grid)?;
    print!("{:>10}", "");
    for p in panel.probes() {
        print!("{:>10}", p.name);
    }
    println!();
    for a in panel.probes() {
        print!("{:>10}", a.name);
        for b in panel.probes() {
            print!("{:>10.5}", w1_distance(&a.measure, &b.measure)?);
        }
        println!();
    }

    let left = GridMeasure::dirac(grid, 0.05);
    let right = GridMeasure::dirac(grid, 0.95);
    println!("dirac(0.05) to dirac(0.95): {:.5} (wraps around)", w1_distance(&left, &right)?);
    Ok(())
}
