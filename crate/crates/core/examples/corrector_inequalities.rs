//! Estimates the corrector on the probe panel from a coarse ladder and runs
//! the inequality suite: lower bound, subsolution slack over random drifts,
//! calibration along optimal arcs and membership in the subsolution class.

use mfg_weakkam::measure::{ProbePanel, TorusGrid};
use mfg_weakkam::mfg::SolveOptions;
use mfg_weakkam::model::{ModelSpec, TrigPoly};
use mfg_weakkam::vanishing::{
    convergence_report, corrector_check, lower_bound_check, random_drifts, run_ladder,
    s_minus_membership, subsolution_check, CorrectorEstimate, LadderSettings,
};

fn main() -> mfg_weakkam::Result<()> {
    let grid = TorusGrid::new(32)?;
    let panel = ProbePanel::default_panel(grid)?;
    let model = ModelSpec::default();
    let dt = 0.01;
    let settings = LadderSettings {
        deltas: vec![0.4, 0.2, 0.1, 0.05],
        solve: SolveOptions {
            dt,
            ..SolveOptions::default()
        },
        ..LadderSettings::default()
    };
    let ladder = run_ladder(&model, &panel, &settings)?;
    let report = convergence_report(&panel, &ladder, &settings)?;
    let est = CorrectorEstimate::from_report(&panel, &report)?;
    let chi = &est.chi;
    println!("lambda_hat = {:.8}, Lipschitz constant {:.4}", est.lambda, chi.k);
    for (name, v) in est.probes.iter().zip(&chi.values) {
        println!("  chi({name}) = {v:+.6e}");
    }

    let last = ladder.deltas.len() - 1;
    let shifted = chi.shifted(-chi.max_value());
    for p in 0..panel.len() {
        let (gap, width) = lower_bound_check(&shifted, ladder.cell(last, p), report.vbar[last][p]);
        let (res, _) = corrector_check(chi, ladder.cell(last, p), est.lambda, 0.5, dt)?;
        println!("{:<10} lower bound gap {gap:+.3e} (width {width:.1e}), calibration residual {res:.3e}", panel.probes()[p].name);
    }

    let mut drifts = vec![TrigPoly::zero()];
    drifts.extend(random_drifts(7, 16));
    let mut subs = Vec::new();
    for p in panel.probes() {
        let s = subsolution_check(&model, chi, &panel, &p.measure, &drifts, 0.5, est.lambda, dt)?;
        println!("{:<10} worst subsolution slack {:+.3e} (drift #{})", p.name, s.worst_slack, s.worst_drift);
        subs.push(s);
    }
    let digests: Vec<_> = (0..panel.len()).map(|p| &ladder.cell(last, p).digest).collect();
    let sm = s_minus_membership(chi, &digests, &subs, 1e-2);
    println!("subsolution class: slack {:+.3e}, max integral {:+.3e}, member = {}", sm.worst_slack, sm.max_integral, sm.passed);
    Ok(())
}
