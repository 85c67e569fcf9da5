//! Experiment driver behind the `mfg-lab` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{Command, RunConfig};
use crate::error::{Error, Result};
use crate::measure::ProbePanel;
use crate::mfg::{dpp_residual, solve_discounted_mfg, SolveOptions};
use crate::model::{GridModel, TrigPoly};
use crate::occupation::{build_occupation, mather_value, CheckLine};
use crate::pde::Scheme;
use crate::vanishing::{
    certify_cell, convergence_report, corrector_check, long_time_check, lower_bound_check,
    panel_distances, random_drifts, run_ladder, s_minus_membership, subsolution_check,
    vbar_integral_check, CorrectorEstimate, Ladder, LadderReport, LipschitzExtension,
};
use crate::ARTIFACT_VERSION;

/// Process-level switches that do not enter the config hash.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub command: Command,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub checks: Vec<CheckLine>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// 0 when every check passed, 2 on check failures, 1 on execution errors.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.passed() => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}

/// Runs `command` and writes its artifacts under `config.output.dir`.
pub fn run(config: &RunConfig, command: Command, opts: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    pool.install(|| {
        let mut r = Runner::new(config, opts)?;
        r.execute(command)?;
        r.finish(command)
    })
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    quiet: bool,
    hash: String,
    out: PathBuf,
    panel: ProbePanel,
    report: String,
    checks: Vec<CheckLine>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a RunConfig, opts: &RunOptions) -> Result<Self> {
        let out = cfg.output.dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            cfg,
            quiet: opts.quiet,
            hash: cfg.hash(),
            out,
            panel: cfg.panel()?,
            report: String::new(),
            checks: Vec::new(),
        })
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("mfg-lab: {msg}");
        }
    }

    fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn section(&mut self, title: &str) {
        let _ = writeln!(self.report, "\n== {title} ==");
    }

    fn check(&mut self, c: CheckLine) {
        let _ = writeln!(self.report, "{}", c.render());
        self.checks.push(c);
    }

    fn execute(&mut self, command: Command) -> Result<()> {
        let doc = json!({
            "artifact_version": ARTIFACT_VERSION,
            "config_hash": self.hash,
            "command": command.name(),
            "config": self.cfg,
        });
        self.write("config.json", &serde_json::to_string_pretty(&doc)?)?;
        match command {
            Command::Solve => self.solve()?,
            Command::Dpp => self.dpp()?,
            Command::Ladder => {
                self.ladder()?;
            }
            Command::Certify => {
                let (ladder, report) = self.ladder()?;
                self.certify(&ladder, &report)?;
            }
            Command::Full => {
                self.solve()?;
                let (ladder, report) = self.ladder()?;
                self.certify(&ladder, &report)?;
                self.corrector(&ladder, &report)?;
                self.dpp()?;
            }
        }
        Ok(())
    }

    fn finish(self, command: Command) -> Result<RunOutcome> {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let mut text = String::new();
        let _ = writeln!(text, "# {ARTIFACT_VERSION} config={}", self.hash);
        let _ = writeln!(text, "command: {}", command.name());
        text.push_str(&self.report);
        let _ = writeln!(
            text,
            "\noverall: {} ({failed} of {} checks failed)",
            if failed == 0 { "PASS" } else { "FAIL" },
            self.checks.len()
        );
        self.write("report.txt", &text)?;
        self.say(&format!(
            "{} checks, {failed} failed; report in {}",
            self.checks.len(),
            self.out.join("report.txt").display()
        ));
        Ok(RunOutcome {
            command,
            out_dir: self.out,
            config_hash: self.hash,
            checks: self.checks,
        })
    }

    fn probe_measure(&self, name: &str) -> Result<crate::measure::GridMeasure> {
        self.panel
            .get(name)
            .map(|p| p.measure.clone())
            .ok_or_else(|| Error::UnknownProbe(name.to_string()))
    }

    fn solve(&mut self) -> Result<()> {
        let target = self.cfg.experiment.solve.clone();
        self.say(&format!("solve: delta={} probe={}", target.delta, target.probe));
        let model = &self.cfg.model;
        let m0 = self.probe_measure(&target.probe)?;
        let opts = self.cfg.solve_options();
        let (arc, rep) = solve_discounted_mfg(model, &m0, target.delta, &opts)?;
        let scheme = Scheme::new(arc.grid, arc.time.dt, model.nu)?;
        let gm = GridModel::new(model, arc.grid);
        let replay = arc.replay_error(&scheme)?;
        let drift = arc.drift_error(&gm, &scheme);
        let dir = PathBuf::from("arcs").join(format!("{}_delta{:?}", target.probe, target.delta));
        if self.cfg.output.write_arcs {
            arc.save(&self.out.join(&dir), Some(&self.hash))?;
        }
        self.section("solve");
        let _ = writeln!(self.report, "delta = {:?}, probe = {}", target.delta, target.probe);
        let _ = writeln!(self.report, "value = {:?}", arc.value);
        let _ = writeln!(self.report, "delta * value = {:?}", target.delta * arc.value);
        let _ = writeln!(
            self.report,
            "horizon = {} ({} steps), tail bound = {:.3e}",
            arc.horizon(),
            arc.time.n_steps,
            arc.tail_bound
        );
        let _ = writeln!(
            self.report,
            "iterations = {}, final residual = {:.3e}",
            rep.iterations,
            rep.residuals.last().copied().unwrap_or(0.0)
        );
        let dv = target.delta * arc.value;
        let occ = build_occupation(arc)?;
        if self.cfg.output.write_occupation {
            occ.write_csv(&self.out.join(&dir).join("occupation.csv"), &self.hash)?;
        }
        let mv = mather_value(&occ, &gm);
        self.check(CheckLine::at_most("solve converged (0 = yes)", (!rep.converged) as u8 as f64, 0.0));
        self.check(CheckLine::at_most("solve trajectory replay error", replay, 1e-12));
        self.check(CheckLine::at_most("solve drift consistency error", drift, 1e-10));
        self.check(CheckLine::at_most(
            "solve mather value vs delta * value",
            (mv - dv).abs(),
            1e-12 * dv.abs().max(1.0),
        ));
        Ok(())
    }

    fn ladder(&mut self) -> Result<(Ladder, LadderReport)> {
        let settings = self.cfg.ladder_settings();
        self.say(&format!(
            "ladder: {} rungs x {} probes",
            settings.deltas.len(),
            self.panel.len()
        ));
        let ladder = run_ladder(&self.cfg.model, &self.panel, &settings)?;
        let report = convergence_report(&self.panel, &ladder, &settings)?;
        self.write("ladder.csv", &report.ladder_csv(&ladder, &self.hash))?;
        self.write("lambda.csv", &report.lambda_csv(&self.hash))?;
        if self.cfg.output.svg {
            self.write("summary.svg", &report.summary_svg(&self.hash))?;
        }
        self.section("ladder");
        let body = report.render(&self.hash);
        // the header line is already at the top of report.txt
        for line in body.lines().skip(1).filter(|l| !l.starts_with("PASS") && !l.starts_with("FAIL")) {
            let _ = writeln!(self.report, "{line}");
        }
        for c in report.checks.clone() {
            self.check(c);
        }
        Ok((ladder, report))
    }

    fn certify(&mut self, ladder: &Ladder, report: &LadderReport) -> Result<()> {
        let settings = self.cfg.ladder_settings();
        self.say("certify: occupation measures");
        let mut failing = 0usize;
        for cell in &ladder.cells {
            let cert = certify_cell(cell, &ladder.battery, Some(report.lambda.lambda), &settings);
            if !cert.passed() {
                failing += 1;
            }
            self.write(
                PathBuf::from("certificates").join(format!("{}_delta{:?}.txt", cell.probe, cell.delta)),
                &cert.render(&self.hash),
            )?;
        }
        self.section("certificates");
        let last = *report.mather_gaps.last().unwrap_or(&0.0);
        self.check(CheckLine::at_most("failing certificates", failing as f64, 0.0));
        self.check(CheckLine::at_most(
            "mather value + lambda at smallest delta",
            last,
            settings.tol_conv,
        ));
        Ok(())
    }

    fn corrector(&mut self, ladder: &Ladder, report: &LadderReport) -> Result<()> {
        let cfg = self.cfg;
        let x = &cfg.experiment;
        let tol = cfg.ladder.tol_ineq;
        self.section("corrector");
        let est = match CorrectorEstimate::from_report(&self.panel, report) {
            Ok(e) => e,
            Err(e) => {
                let _ = writeln!(self.report, "no corrector estimate: {e}");
                self.check(CheckLine::at_most("corrector estimate available (0 = yes)", 1.0, 0.0));
                return Ok(());
            }
        };
        let chi = &est.chi;
        let _ = writeln!(self.report, "lambda_hat = {:?}", est.lambda);
        let _ = writeln!(self.report, "chi_hat at delta = {:?} (K = {:.6e}):", est.delta_min, chi.k);
        for (name, v) in est.probes.iter().zip(&chi.values) {
            let _ = writeln!(self.report, "  {name:<16} {v:.9e}");
        }
        let nr = ladder.deltas.len();
        let np = self.panel.len();

        let shifted = chi.shifted(-chi.max_value());
        let mut worst_lower = f64::INFINITY;
        for r in 0..nr {
            for p in 0..np {
                let (gap, _) = lower_bound_check(&shifted, ladder.cell(r, p), report.vbar[r][p]);
                worst_lower = worst_lower.min(gap);
            }
        }
        self.check(CheckLine::at_least("lower bound gap (worst cell)", worst_lower, -tol));

        let dist = panel_distances(&self.panel);
        let mut worst_int = f64::NEG_INFINITY;
        for r in 0..nr {
            let ext = LipschitzExtension::new(report.vbar[r].clone(), &dist);
            for r2 in r + 1..nr {
                for p in 0..np {
                    let (v, _) = vbar_integral_check(&ext, &ladder.cell(r2, p).digest);
                    worst_int = worst_int.max(v - ext.k * ladder.deltas[r2]);
                }
            }
        }
        if nr > 1 {
            self.check(CheckLine::at_most("vbar integral minus K delta' (worst pair)", worst_int, tol));
        }

        let mut drifts = vec![TrigPoly::zero()];
        drifts.extend(random_drifts(cfg.seed, x.drift_samples));
        let tasks: Vec<(f64, usize)> = x
            .subsolution_h
            .iter()
            .flat_map(|h| (0..np).map(move |p| (*h, p)))
            .collect();
        let subs = {
            use rayon::prelude::*;
            let panel = &self.panel;
            tasks
                .par_iter()
                .map(|&(h, p)| {
                    subsolution_check(
                        &cfg.model,
                        chi,
                        panel,
                        &panel.probes()[p].measure,
                        &drifts,
                        h,
                        est.lambda,
                        cfg.discretization.dt,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        };
        let worst_sub = subs.iter().map(|s| s.worst_slack).fold(f64::INFINITY, f64::min);
        let interp = subs.iter().map(|s| s.interpolation_error).fold(0.0, f64::max);
        let _ = writeln!(
            self.report,
            "subsolution: {} drifts x {} horizons x {} probes, interpolation error {:.3e}",
            drifts.len(),
            x.subsolution_h.len(),
            np,
            interp
        );
        self.check(CheckLine::at_least("subsolution slack (worst sample)", worst_sub, -tol));

        let corr_tol = 3.0 * (cfg.ladder.tol_conv + cfg.discretization.dt);
        let mut worst_corr = 0.0f64;
        for p in 0..np {
            for h in &x.corrector_h {
                let (res, _) = corrector_check(chi, ladder.cell(nr - 1, p), est.lambda, *h, cfg.discretization.dt)?;
                worst_corr = worst_corr.max(res);
            }
        }
        self.check(CheckLine::at_most("corrector residual (worst probe)", worst_corr, corr_tol));

        let digests: Vec<_> = (0..np).map(|p| &ladder.cell(nr - 1, p).digest).collect();
        let sm = s_minus_membership(chi, &digests, &subs, tol);
        let _ = writeln!(
            self.report,
            "subsolution class: worst slack {:.6e}, max integral {:.6e}",
            sm.worst_slack, sm.max_integral
        );
        self.check(CheckLine::at_most("subsolution class membership (0 = yes)", (!sm.passed) as u8 as f64, 0.0));

        self.say("long-time comparison");
        let lt = long_time_check(
            &cfg.model,
            &self.panel,
            &cfg.solve_options(),
            &x.long_time,
            est.lambda,
            &chi.values,
        )?;
        let _ = writeln!(self.report, "long-time values U^T + lambda T:");
        for (t, row) in lt.horizons.iter().zip(&lt.values) {
            let _ = write!(self.report, "{t:>10}");
            for v in row {
                let _ = write!(self.report, " {v:>16.9e}");
            }
            let _ = writeln!(self.report);
        }
        let _ = writeln!(self.report, "offsets to chi_hat: {:?}", lt.offsets);
        self.check(CheckLine::at_most("long-time solves converged (0 = yes)", (!lt.converged) as u8 as f64, 0.0));
        let max_gap = lt.gaps.iter().cloned().fold(0.0, f64::max);
        self.check(CheckLine::at_most("long-time cauchy gap", max_gap, cfg.ladder.tol_conv));
        self.check(CheckLine::at_most("long-time offset spread", lt.offset_spread, cfg.ladder.tol_cross));
        Ok(())
    }

    fn dpp(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let target = cfg.experiment.dpp.clone();
        let t = cfg.experiment.dpp_time;
        self.say(&format!("dpp: delta={} probe={} t={t}", target.delta, target.probe));
        let m0 = self.probe_measure(&target.probe)?;
        let base = cfg.solve_options();
        let fine = SolveOptions {
            dt: base.dt / 2.0,
            ..base.clone()
        };
        let runs = {
            use rayon::prelude::*;
            [base.clone(), fine]
                .par_iter()
                .map(|opts| -> Result<_> {
                    let (arc, rep) = solve_discounted_mfg(&cfg.model, &m0, target.delta, opts)?;
                    let (res, nested) = dpp_residual(&cfg.model, &arc, t, opts)?;
                    Ok((arc, rep.converged && nested.converged, res))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if cfg.output.write_arcs {
            runs[0].0.save(
                &self.out.join("arcs").join(format!("dpp_{}_delta{:?}", target.probe, target.delta)),
                Some(&self.hash),
            )?;
        }
        self.section("dynamic programming");
        let _ = writeln!(self.report, "delta = {:?}, probe = {}, t = {t}", target.delta, target.probe);
        let _ = writeln!(self.report, "residual at dt = {:?}: {:.6e}", base.dt, runs[0].2);
        let _ = writeln!(self.report, "residual at dt = {:?}: {:.6e}", base.dt / 2.0, runs[1].2);
        let all = runs.iter().all(|r| r.1);
        self.check(CheckLine::at_most("dpp solves converged (0 = yes)", (!all) as u8 as f64, 0.0));
        self.check(CheckLine::at_most(
            "dpp residual",
            runs[0].2,
            cfg.experiment.dpp_constant * (base.dt + base.tol_fp + base.tol_tail),
        ));
        self.check(CheckLine::at_most("dpp residual after halving dt", runs[1].2, runs[0].2));
        Ok(())
    }
}
