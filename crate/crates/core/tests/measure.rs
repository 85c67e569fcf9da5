mod common;

use std::f64::consts::PI;

use common::{lp_w1, random_masses};
use mfg_weakkam::measure::{
    discrete_c2_norm, make_probe, w1_distance, w1_masses, GridMeasure, ProbePanel, ProbeSpec,
    TorusGrid,
};
use mfg_weakkam::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn w1_matches_transport_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [4, 8, 16] {
        let grid = TorusGrid::new(n).unwrap();
        for _ in 0..200 {
            let a = GridMeasure::from_masses(grid, random_masses(&mut rng, n)).unwrap();
            let b = GridMeasure::from_masses(grid, random_masses(&mut rng, n)).unwrap();
            let fast = w1_distance(&a, &b).unwrap();
            let lp = lp_w1(a.masses(), b.masses());
            assert!((fast - lp).abs() <= 1e-9, "n={n}: {fast} vs {lp}");
        }
    }
}

#[test]
fn dirac_distance_is_arc_length() {
    let grid = TorusGrid::new(8).unwrap();
    let a = GridMeasure::dirac(grid, 0.1);
    let b = GridMeasure::dirac(grid, 0.6);
    assert!((w1_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    let c = GridMeasure::dirac(grid, 0.9);
    assert!((w1_distance(&a, &c).unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn w1_rejects_grid_mismatch() {
    let a = GridMeasure::uniform(TorusGrid::new(4).unwrap());
    let b = GridMeasure::uniform(TorusGrid::new(8).unwrap());
    assert!(matches!(w1_distance(&a, &b), Err(Error::GridMismatch { .. })));
}

#[test]
fn invalid_masses_are_rejected() {
    let g = TorusGrid::new(4).unwrap();
    assert!(GridMeasure::from_masses(g, vec![0.5, 0.5, 0.5, -0.5]).is_err());
    assert!(GridMeasure::from_masses(g, vec![0.3, 0.3, 0.3, 0.3]).is_err());
    assert!(GridMeasure::from_masses(g, vec![0.25; 3]).is_err());
    assert!(TorusGrid::new(1).is_err());
}

#[test]
fn default_panel_is_normalized() {
    let grid = TorusGrid::new(64).unwrap();
    let panel = ProbePanel::default_panel(grid).unwrap();
    let names: Vec<_> = panel.probes().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ["uniform", "bump", "two_bump", "cosine"]);
    for p in panel.probes() {
        assert!((p.measure.total_mass() - 1.0).abs() < 1e-14);
        assert!(p.measure.masses().iter().all(|m| *m > 0.0));
    }
    let u = panel.get("uniform").unwrap();
    assert!(u.measure.masses().iter().all(|m| *m == 1.0 / 64.0));
}

#[test]
fn two_bump_with_mirror_centers_is_symmetric() {
    let grid = TorusGrid::new(32).unwrap();
    let m = make_probe(
        grid,
        &ProbeSpec::TwoBump {
            kappa: 4.0,
            centers: [0.25, 0.75],
            weight: 0.5,
        },
    )
    .unwrap();
    let v = m.masses();
    for j in 0..16 {
        assert!((v[j] - v[j + 16]).abs() < 1e-15);
    }
}

#[test]
fn c2_norm_of_cosine_density_converges() {
    let a = 0.3;
    let exact = 1.0 + a + 2.0 * PI * a + 4.0 * PI * PI * a;
    let mut errs = Vec::new();
    for n in [32, 64, 128] {
        let g = TorusGrid::new(n).unwrap();
        let m = make_probe(g, &ProbeSpec::Cosine { amplitude: a }).unwrap();
        errs.push((discrete_c2_norm(&m) - exact).abs());
    }
    assert!(errs[2] < 2e-2 * exact, "{errs:?}");
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert_eq!(discrete_c2_norm(&GridMeasure::uniform(TorusGrid::new(16).unwrap())), 1.0);
}

#[test]
fn csv_row_round_trips() {
    let g = TorusGrid::new(16).unwrap();
    let m = make_probe(g, &ProbeSpec::Bump { kappa: 2.0, center: 0.3 }).unwrap();
    let (name, back) = GridMeasure::from_csv_row(&m.to_csv_row("b")).unwrap();
    assert_eq!(name, "b");
    assert_eq!(back, m);
}

fn masses_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn w1_is_a_metric(a in masses_strategy(12), b in masses_strategy(12), c in masses_strategy(12)) {
        let ab = w1_masses(&a, &b);
        let ba = w1_masses(&b, &a);
        let ac = w1_masses(&a, &c);
        let cb = w1_masses(&c, &b);
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= ac + cb + 1e-14);
        prop_assert!(ab <= 0.5 + 1e-14);
        prop_assert!(w1_masses(&a, &a) < 1e-15);
    }

    #[test]
    fn w1_is_rotation_invariant(a in masses_strategy(10), b in masses_strategy(10), s in 0usize..10) {
        let rot = |v: &[f64]| -> Vec<f64> { (0..v.len()).map(|j| v[(j + s) % v.len()]).collect() };
        prop_assert!((w1_masses(&a, &b) - w1_masses(&rot(&a), &rot(&b))).abs() < 1e-14);
    }

    #[test]
    fn w1_of_mixture_is_convex(a in masses_strategy(8), b in masses_strategy(8), c in masses_strategy(8), t in 0.0f64..1.0) {
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        let lhs = w1_masses(&mix, &c);
        let rhs = (1.0 - t) * w1_masses(&a, &c) + t * w1_masses(&b, &c);
        prop_assert!(lhs <= rhs + 1e-14);
    }
}
