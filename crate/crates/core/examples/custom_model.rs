//! Builds a model with an anisotropic Hamiltonian and a convolution coupling,
//! then evaluates the coupling functional and its flat derivative.

use mfg_weakkam::measure::{make_probe, ProbeSpec, TorusGrid};
use mfg_weakkam::model::{
    coupling_value, flat_derivative, hamiltonian, legendre_conjugate, Coupling, HamiltonianKind,
    ModelSpec, TrigPoly,
};

fn main() -> mfg_weakkam::Result<()> {
    let model = ModelSpec {
        hamiltonian: HamiltonianKind::AnisotropicQuadratic {
            a: TrigPoly::new(vec![(0, 1.5, 0.0), (1, 0.3, 0.0)]),
            a_min: 1.0,
        },
        potential: TrigPoly::new(vec![(2, 0.2, 0.0)]),
        coupling: Coupling {
            f: TrigPoly::cos(1),
            theta: 0.5,
            kernel: TrigPoly::new(vec![(0, 1.0, 0.0), (1, 0.8, 0.0)]),
            offset: 0.0,
        },
        nu: 0.5,
    };
    model.validate()?;
    println!("model hash {}", model.hash());

    let (x, p) = (0.25, 1.3);
    let q = 0.7;
    println!("H(x, p) = {:.6}, H*(x, q) = {:.6}", hamiltonian(&model, x, p), legendre_conjugate(&model, x, q));

    let grid = TorusGrid::new(16)?;
    let m = make_probe(grid, &ProbeSpec::Cosine { amplitude: 0.4 })?;
    println!("coupling F(m) = {:.8}", coupling_value(&model, &m));
    let d = flat_derivative(&model, &m);
    let mean: f64 = d.iter().zip(m.masses()).map(|(a, b)| a * b).sum();
    println!("flat derivative, <dF/dm, m> = {mean:.1e}:");
    for (j, v) in d.iter().enumerate().step_by(2) {
        println!("  x = {:.4}  {v:+.6}", grid.center(j));
    }
    Ok(())
}
