//! Run configuration: JSON in, validated, hashed for provenance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{ProbePanel, ProbeSpec, TorusGrid};
use crate::mfg::{Damping, SolveOptions};
use crate::model::ModelSpec;
use crate::vanishing::LadderSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Ladder,
    Certify,
    Dpp,
    Full,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Ladder => "ladder",
            Command::Certify => "certify",
            Command::Dpp => "dpp",
            Command::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub n_cells: usize,
    pub dt: f64,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub tol_tail: f64,
    pub damping: Damping,
}

impl Default for Discretization {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            n_cells: 64,
            dt: o.dt,
            tol_fp: o.tol_fp,
            max_iter: o.max_iter,
            tol_tail: o.tol_tail,
            damping: o.damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderSection {
    pub deltas: Vec<f64>,
    pub tol_conv: f64,
    pub tol_lambda: f64,
    pub c_smooth: f64,
    pub bound_ratio: f64,
    pub closedness_band: [f64; 2],
    /// Slack allowed in the inequality suite.
    pub tol_ineq: f64,
    /// Allowed spread of the offset between long-time values and the corrector.
    pub tol_cross: f64,
}

impl Default for LadderSection {
    fn default() -> Self {
        let s = LadderSettings::default();
        Self {
            deltas: s.deltas,
            tol_conv: s.tol_conv,
            tol_lambda: s.tol_lambda,
            c_smooth: s.c_smooth,
            bound_ratio: s.bound_ratio,
            closedness_band: s.closedness_band,
            tol_ineq: 1e-2,
            tol_cross: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelEntry {
    pub name: String,
    pub probe: ProbeSpec,
}

fn default_panel() -> Vec<PanelEntry> {
    ProbePanel::default_entries()
        .into_iter()
        .map(|(name, probe)| PanelEntry { name, probe })
        .collect()
}

/// Target of the single-solve and DPP experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveTarget {
    pub delta: f64,
    pub probe: String,
}

impl Default for SolveTarget {
    fn default() -> Self {
        Self {
            delta: 0.2,
            probe: "bump".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    /// Used when no command is given on the command line.
    pub command: Command,
    pub solve: SolveTarget,
    pub dpp: SolveTarget,
    /// Split time of the DPP check.
    pub dpp_time: f64,
    /// The DPP residual must stay below `dpp_constant * (dt + tol_fp + tol_tail)`.
    pub dpp_constant: f64,
    /// Horizons of the subsolution check.
    pub subsolution_h: Vec<f64>,
    /// Number of random drift samples (the zero drift is always added).
    pub drift_samples: usize,
    pub corrector_h: Vec<f64>,
    /// Horizons of the long-time comparison.
    pub long_time: Vec<f64>,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            command: Command::Full,
            solve: SolveTarget::default(),
            dpp: SolveTarget::default(),
            dpp_time: 1.0,
            dpp_constant: 1.0,
            subsolution_h: vec![0.25, 0.5],
            drift_samples: 16,
            corrector_h: vec![0.5],
            long_time: vec![10.0, 20.0, 40.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write solved arcs for `solve` and `dpp`.
    pub write_arcs: bool,
    /// Write the occupation measure of the `solve` arc.
    pub write_occupation: bool,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_arcs: true,
            write_occupation: false,
            svg: true,
        }
    }
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default = "default_panel")]
    pub panel: Vec<PanelEntry>,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            discretization: Discretization::default(),
            ladder: LadderSection::default(),
            panel: default_panel(),
            experiment: Experiment::default(),
            output: OutputSection::default(),
            seed: default_seed(),
        }
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config_str(&text).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(errs: &mut Vec<String>, ok: bool, field: &str, msg: impl FnOnce() -> String) {
    if !ok {
        errs.push(format!("{field}: {}", msg()));
    }
}

impl RunConfig {
    /// Checks every numeric field against its documented range and reports
    /// all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        if let Err(err) = self.model.validate() {
            e.push(format!("model: {err}"));
        }
        let d = &self.discretization;
        check(&mut e, (4..=4096).contains(&d.n_cells), "discretization.n_cells", || {
            format!("must lie in [4, 4096], got {}", d.n_cells)
        });
        check(&mut e, d.dt > 0.0 && d.dt <= 0.1, "discretization.dt", || {
            format!("must lie in (0, 0.1], got {}", d.dt)
        });
        check(&mut e, d.tol_fp > 0.0 && d.tol_fp <= 1.0, "discretization.tol_fp", || {
            format!("must lie in (0, 1], got {}", d.tol_fp)
        });
        check(&mut e, d.tol_tail > 0.0 && d.tol_tail <= 1.0, "discretization.tol_tail", || {
            format!("must lie in (0, 1], got {}", d.tol_tail)
        });
        check(&mut e, (1..=100_000).contains(&d.max_iter), "discretization.max_iter", || {
            format!("must lie in [1, 100000], got {}", d.max_iter)
        });
        if let Damping::Constant { omega } = d.damping {
            check(&mut e, omega > 0.0 && omega <= 1.0, "discretization.damping.omega", || {
                format!("must lie in (0, 1], got {omega}")
            });
        }
        let l = &self.ladder;
        check(&mut e, l.deltas.len() >= 4, "ladder.deltas", || {
            format!("need at least 4 rungs, got {}", l.deltas.len())
        });
        for (i, x) in l.deltas.iter().enumerate() {
            check(&mut e, *x > 0.0 && *x <= 10.0, &format!("ladder.deltas[{i}]"), || {
                format!("must lie in (0, 10], got {x}")
            });
        }
        check(
            &mut e,
            l.deltas.windows(2).all(|w| w[1] < w[0]),
            "ladder.deltas",
            || "must be strictly decreasing".into(),
        );
        for (name, v) in [
            ("ladder.tol_conv", l.tol_conv),
            ("ladder.tol_lambda", l.tol_lambda),
            ("ladder.c_smooth", l.c_smooth),
            ("ladder.tol_ineq", l.tol_ineq),
            ("ladder.tol_cross", l.tol_cross),
            ("experiment.dpp_constant", self.experiment.dpp_constant),
        ] {
            check(&mut e, v > 0.0 && v.is_finite(), name, || format!("must be > 0, got {v}"));
        }
        check(&mut e, l.bound_ratio >= 1.0, "ladder.bound_ratio", || {
            format!("must be >= 1, got {}", l.bound_ratio)
        });
        let [lo, hi] = l.closedness_band;
        check(&mut e, lo > 0.0 && lo < hi, "ladder.closedness_band", || {
            format!("need 0 < lo < hi, got [{lo}, {hi}]")
        });
        check(&mut e, !self.panel.is_empty(), "panel", || "at least one probe is required".into());
        for (i, p) in self.panel.iter().enumerate() {
            if let Err(err) = p.probe.validate() {
                e.push(format!("panel[{i}] ({}): {err}", p.name));
            }
            if self.panel[..i].iter().any(|q| q.name == p.name) {
                e.push(format!("panel[{i}]: duplicate name `{}`", p.name));
            }
        }
        let x = &self.experiment;
        for (field, t) in [("experiment.solve", &x.solve), ("experiment.dpp", &x.dpp)] {
            check(&mut e, t.delta > 0.0 && t.delta <= 10.0, &format!("{field}.delta"), || {
                format!("must lie in (0, 10], got {}", t.delta)
            });
            check(
                &mut e,
                self.panel.iter().any(|p| p.name == t.probe),
                &format!("{field}.probe"),
                || format!("`{}` is not a panel probe", t.probe),
            );
        }
        check(&mut e, x.dpp_time >= 0.0 && x.dpp_time.is_finite(), "experiment.dpp_time", || {
            format!("must be >= 0, got {}", x.dpp_time)
        });
        for (field, hs) in [("experiment.subsolution_h", &x.subsolution_h), ("experiment.corrector_h", &x.corrector_h)] {
            check(&mut e, !hs.is_empty(), field, || "need at least one horizon".into());
            for (i, h) in hs.iter().enumerate() {
                check(&mut e, *h > 0.0 && *h <= 1.0, &format!("{field}[{i}]"), || {
                    format!("must lie in (0, 1], got {h}")
                });
            }
        }
        check(&mut e, (1..=1000).contains(&x.drift_samples), "experiment.drift_samples", || {
            format!("must lie in [1, 1000], got {}", x.drift_samples)
        });
        check(&mut e, x.long_time.len() >= 2, "experiment.long_time", || {
            "need at least two horizons".into()
        });
        for (i, t) in x.long_time.iter().enumerate() {
            check(&mut e, *t > 0.0 && *t <= 1e4, &format!("experiment.long_time[{i}]"), || {
                format!("must lie in (0, 10000], got {t}")
            });
        }
        check(
            &mut e,
            x.long_time.windows(2).all(|w| w[1] > w[0]),
            "experiment.long_time",
            || "must be strictly increasing".into(),
        );
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigRanges(e))
        }
    }

    /// SHA-256 of the canonical JSON form without the output section, so that
    /// runs writing to different directories share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.discretization.n_cells)
    }

    pub fn panel(&self) -> Result<ProbePanel> {
        let entries: Vec<(String, ProbeSpec)> = self
            .panel
            .iter()
            .map(|p| (p.name.clone(), p.probe.clone()))
            .collect();
        ProbePanel::new(self.grid()?, &entries)
    }

    pub fn solve_options(&self) -> SolveOptions {
        let d = &self.discretization;
        SolveOptions {
            dt: d.dt,
            tol_fp: d.tol_fp,
            max_iter: d.max_iter,
            tol_tail: d.tol_tail,
            damping: d.damping,
            horizon: None,
        }
    }

    pub fn ladder_settings(&self) -> LadderSettings {
        let l = &self.ladder;
        LadderSettings {
            deltas: l.deltas.clone(),
            solve: self.solve_options(),
            tol_conv: l.tol_conv,
            tol_lambda: l.tol_lambda,
            c_smooth: l.c_smooth,
            bound_ratio: l.bound_ratio,
            closedness_band: l.closedness_band,
            head_horizon: self
                .experiment
                .corrector_h
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(self.discretization.dt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn canonical_round_trip_keeps_the_hash() {
        let mut cfg = RunConfig::default();
        cfg.model = cfg.model.with_offset(0.25);
        cfg.seed = 99;
        let back = parse_config_str(&cfg.to_canonical_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn output_dir_does_not_enter_the_hash() {
        let mut cfg = RunConfig::default();
        let h = cfg.hash();
        cfg.output.dir = "elsewhere".into();
        assert_eq!(cfg.hash(), h);
    }

    #[test]
    fn nonpositive_delta_is_named() {
        let err = parse_config_str(r#"{"ladder": {"deltas": [0.4, 0.2, 0.0, -0.1]}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ladder.deltas[2]"), "{msg}");
        assert!(msg.contains("ladder.deltas[3]"), "{msg}");
    }

    #[test]
    fn all_violations_are_listed() {
        let err = parse_config_str(
            r#"{"discretization": {"n_cells": 2, "dt": -1}, "experiment": {"drift_samples": 0}}"#,
        )
        .unwrap_err();
        match err {
            Error::ConfigRanges(v) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config_str(r#"{"ladder": {"delta": [0.1]}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
        assert!(parse_config_str(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = parse_config_str("{\n  \"seed\": 1,\n  \"model\": [\n}").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
