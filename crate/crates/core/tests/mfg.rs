mod common;

use common::Transcription;
use mfg_weakkam::measure::{make_probe, GridMeasure, ProbeSpec, TorusGrid};
use mfg_weakkam::mfg::{
    dpp_residual, finite_horizon_value, horizon_for, path_cost, solve_discounted_mfg, Damping,
    SolveOptions, TrajectoryArc,
};
use mfg_weakkam::model::{GridModel, ModelSpec, TrigPoly};
use mfg_weakkam::pde::Scheme;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts(dt: f64) -> SolveOptions {
    SolveOptions {
        dt,
        ..SolveOptions::default()
    }
}

fn bump(grid: TorusGrid) -> GridMeasure {
    make_probe(grid, &ProbeSpec::Bump { kappa: 4.0, center: 0.5 }).unwrap()
}

#[test]
fn horizon_example() {
    let t = horizon_for(0.1, 1e-6, 1.0, 0.01).unwrap();
    assert!((t - 161.18).abs() < 0.01, "{t}");
    assert!((-0.1 * t).exp() / 0.1 <= 1e-6 * (1.0 + 1e-12));
    assert!(horizon_for(-0.1, 1e-6, 1.0, 0.01).is_err());
}

#[test]
fn value_matches_direct_transcription() {
    let grid = TorusGrid::new(8).unwrap();
    let spec = ModelSpec {
        potential: TrigPoly::new(vec![(1, 0.0, 0.5)]),
        ..ModelSpec::default()
    };
    let m0 = bump(grid);
    let o = SolveOptions {
        dt: 0.02,
        tol_fp: 1e-10,
        tol_tail: 1e-9,
        damping: Damping::Constant { omega: 1.0 },
        ..SolveOptions::default()
    };
    let (arc, rep) = solve_discounted_mfg(&spec, &m0, 1.0, &o).unwrap();
    assert!(rep.converged);
    let oracle = Transcription::new(&spec, m0.masses(), 1.0, 0.02, arc.time.n_steps);
    let (value, _) = oracle.minimize(1e-13, 5000);
    assert!((arc.value - value).abs() <= 1e-8 * value.abs(), "{} vs {value}", arc.value);
}

#[test]
fn zero_cost_is_zero_everywhere() {
    let grid = TorusGrid::new(16).unwrap();
    let m0 = bump(grid);
    let spec = ModelSpec::zero_cost();
    let (arc, rep) = solve_discounted_mfg(&spec, &m0, 0.3, &opts(0.01)).unwrap();
    assert_eq!(rep.iterations, 1);
    assert_eq!(arc.value, 0.0);
    let (r, _) = dpp_residual(&spec, &arc, 1.0, &opts(0.01)).unwrap();
    assert_eq!(r, 0.0);
    let (fh, _) = finite_horizon_value(&spec, &m0, 5.0, &opts(0.01)).unwrap();
    assert_eq!(fh.value, 0.0);
}

#[test]
fn constant_coupling_integrates_exactly() {
    let grid = TorusGrid::new(16).unwrap();
    let m0 = bump(grid);
    let spec = ModelSpec::constant_coupling(0.7);
    for delta in [0.05, 0.5, 2.0] {
        let (arc, _) = solve_discounted_mfg(&spec, &m0, delta, &opts(0.01)).unwrap();
        assert!((arc.value - 0.7 / delta).abs() <= 1e-12 * 0.7 / delta);
        let (r, _) = dpp_residual(&spec, &arc, 0.5, &opts(0.01)).unwrap();
        assert!(r <= 1e-6, "{r}");
    }
    let (fh, _) = finite_horizon_value(&spec, &m0, 5.0, &opts(0.01)).unwrap();
    assert!((fh.value - 3.5).abs() < 1e-12);
}

#[test]
fn arc_invariants_and_round_trip() {
    let grid = TorusGrid::new(16).unwrap();
    let spec = ModelSpec::default();
    let (arc, rep) = solve_discounted_mfg(&spec, &bump(grid), 0.5, &opts(0.01)).unwrap();
    assert!(rep.converged);
    assert!(rep.residuals.len() == rep.iterations && rep.values.len() == rep.iterations);
    assert!(*rep.residuals.last().unwrap() <= 1e-6);
    let scheme = Scheme::new(grid, 0.01, spec.nu).unwrap();
    assert!(arc.replay_error(&scheme).unwrap() <= 1e-12);
    assert!(arc.drift_error(&GridModel::new(&spec, grid), &scheme) <= 1e-10);
    let dir = tempfile::tempdir().unwrap();
    arc.save(dir.path(), Some("abc")).unwrap();
    let back = TrajectoryArc::load(dir.path()).unwrap();
    assert_eq!(back.m, arc.m);
    assert_eq!(back.alpha, arc.alpha);
    assert_eq!(back.u, arc.u);
    assert_eq!(back.value.to_bits(), arc.value.to_bits());
    let meta = std::fs::read_to_string(dir.path().join("meta.json")).unwrap();
    assert!(meta.contains("abc") && meta.contains(mfg_weakkam::ARTIFACT_VERSION));
}

#[test]
fn non_convergence_is_reported_not_raised() {
    let grid = TorusGrid::new(16).unwrap();
    let o = SolveOptions {
        max_iter: 2,
        ..opts(0.01)
    };
    let (arc, rep) = solve_discounted_mfg(&ModelSpec::default(), &bump(grid), 0.5, &o).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iterations, 2);
    assert!(arc.value.is_finite());
}

#[test]
fn dpp_residual_shrinks_with_the_step() {
    let grid = TorusGrid::new(32).unwrap();
    let spec = ModelSpec::default();
    let m0 = bump(grid);
    let mut res = Vec::new();
    for dt in [0.01, 0.005] {
        let (arc, _) = solve_discounted_mfg(&spec, &m0, 0.2, &opts(dt)).unwrap();
        let (r, rep) = dpp_residual(&spec, &arc, 1.0, &opts(dt)).unwrap();
        assert!(rep.converged);
        res.push(r);
    }
    assert!(res[0] <= 0.01 + 2e-6, "{res:?}");
    assert!(res[1] <= res[0], "{res:?}");
}

#[test]
fn dpp_rejects_off_grid_times() {
    let grid = TorusGrid::new(8).unwrap();
    let (arc, _) = solve_discounted_mfg(&ModelSpec::zero_cost(), &bump(grid), 1.0, &opts(0.01)).unwrap();
    assert!(dpp_residual(&ModelSpec::zero_cost(), &arc, 0.0133, &opts(0.01)).is_err());
    assert!(dpp_residual(&ModelSpec::zero_cost(), &arc, arc.horizon(), &opts(0.01)).is_err());
}

#[test]
fn lipschitz_in_the_initial_measure() {
    let grid = TorusGrid::new(16).unwrap();
    let spec = ModelSpec::default();
    let a = bump(grid);
    let b = make_probe(grid, &ProbeSpec::Cosine { amplitude: 0.5 }).unwrap();
    let d = mfg_weakkam::measure::w1_distance(&a, &b).unwrap();
    let mut ks = Vec::new();
    for delta in [0.4, 0.2, 0.1] {
        let (va, _) = solve_discounted_mfg(&spec, &a, delta, &opts(0.01)).unwrap();
        let (vb, _) = solve_discounted_mfg(&spec, &b, delta, &opts(0.01)).unwrap();
        ks.push((va.value - vb.value).abs() / d);
    }
    let (lo, hi) = ks.iter().fold((f64::INFINITY, 0.0f64), |(l, h), k| (l.min(*k), h.max(*k)));
    assert!(hi / lo < 1.2, "{ks:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn value_is_below_any_admissible_path(seed in 0u64..1000) {
        let grid = TorusGrid::new(12).unwrap();
        let spec = ModelSpec::default();
        let m0 = bump(grid);
        let o = opts(0.02);
        let delta = 1.0;
        let (arc, _) = solve_discounted_mfg(&spec, &m0, delta, &o).unwrap();
        let scheme = Scheme::new(grid, o.dt, spec.nu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = scheme.max_drift() * 0.5;
        let c: Vec<(u32, f64, f64)> = (0..3)
            .map(|k| (k, rng.gen_range(-1.0..1.0) * bound / 3.0, rng.gen_range(-1.0..1.0) * bound / 3.0))
            .collect();
        let omega: f64 = rng.gen_range(0.0..2.0);
        let slices = arc.time.n_slices();
        let mut alpha = Array2::zeros((slices, grid.n_cells()));
        for k in 0..slices - 1 {
            let t = arc.time.t(k);
            let p = TrigPoly::new(c.iter().map(|&(q, a, b)| (q, a * (omega * t).cos(), b)).collect());
            for (j, v) in p.on_grid(grid).into_iter().enumerate() {
                alpha[[k, j]] = v;
            }
        }
        let cost = path_cost(&GridModel::new(&spec, grid), &scheme, &m0, &alpha, delta).unwrap();
        prop_assert!(cost >= arc.value - (o.tol_fp + o.tol_tail), "{} < {}", cost, arc.value);
    }
}
