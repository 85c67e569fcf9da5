//! The vanishing-discount experiment: the ladder of discounted solves over a
//! probe panel, the ergodic constant, the normalized values
//! `V_delta + lambda / delta`, the limiting corrector, and the inequalities
//! that characterize it.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{w1_distance, w1_masses, GridMeasure, ProbePanel, W1Scratch};
use crate::mfg::{finite_horizon_value, solve_discounted_mfg, SolveOptions, SolveReport};
use crate::model::{functional_battery, GridModel, ModelSpec, TestFunctional, TrigPoly};
use crate::occupation::{
    build_occupation, closedness_residuals, generator_identity_residual, mather_value,
    smoothness_certificate, CheckLine, MatherCertificate, Smoothness,
};
use crate::pde::{value_derivative_bounds, Scheme};
use crate::ARTIFACT_VERSION;

/// Tolerances and discretization of a ladder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderSettings {
    /// Discount rates, strictly decreasing.
    pub deltas: Vec<f64>,
    pub solve: SolveOptions,
    /// Bound on the final Cauchy gap and on the inequality slacks.
    pub tol_conv: f64,
    /// Allowed probe spread of the per-probe ergodic-constant estimates.
    pub tol_lambda: f64,
    /// Bound on the density C2 and drift C1 constants of occupation atoms.
    pub c_smooth: f64,
    /// Allowed ratio between the largest and smallest per-rung `sup |V_bar|`.
    pub bound_ratio: f64,
    /// Admissible band for `closedness(delta) / closedness(delta / 2)`.
    pub closedness_band: [f64; 2],
    /// Arc prefix kept for the corrector check.
    pub head_horizon: f64,
}

impl Default for LadderSettings {
    fn default() -> Self {
        Self {
            deltas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            solve: SolveOptions::default(),
            tol_conv: 2e-2,
            tol_lambda: 1e-3,
            c_smooth: 1e4,
            bound_ratio: 1.2,
            closedness_band: [1.4, 2.6],
            head_horizon: 0.5,
        }
    }
}

impl LadderSettings {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.deltas.len() < 2 {
            errs.push("ladder.deltas: need at least 2 rungs".to_string());
        }
        for (i, d) in self.deltas.iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                errs.push(format!("ladder.deltas[{i}]: must be > 0, got {d}"));
            }
        }
        if self.deltas.windows(2).any(|w| !(w[1] < w[0])) {
            errs.push("ladder.deltas: must be strictly decreasing".to_string());
        }
        if let Err(e) = self.solve.validate() {
            errs.push(e.to_string());
        }
        for (name, v) in [
            ("tol_conv", self.tol_conv),
            ("tol_lambda", self.tol_lambda),
            ("c_smooth", self.c_smooth),
            ("head_horizon", self.head_horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("ladder.{name}: must be > 0, got {v}"));
            }
        }
        if !(self.bound_ratio >= 1.0) {
            errs.push(format!("ladder.bound_ratio: must be >= 1, got {}", self.bound_ratio));
        }
        let [lo, hi] = self.closedness_band;
        if !(lo > 0.0 && lo < hi) {
            errs.push(format!("ladder.closedness_band: need 0 < lo < hi, got [{lo}, {hi}]"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigRanges(errs))
        }
    }
}

/// Weights of an occupation measure with the W1 distance of every atom to
/// every panel probe; enough to integrate any Lipschitz extension.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDigest {
    pub weights: Vec<f64>,
    /// `dist[[i, p]] = W1(m_i, probe_p)`
    pub dist: Array2<f64>,
}

impl AtomDigest {
    /// `sum_i w_i f(lower_i, upper_i)` evaluated with `ext`; also returns the
    /// weighted envelope width.
    pub fn integrate(&self, ext: &LipschitzExtension) -> (f64, f64) {
        let mut value = 0.0;
        let mut width = 0.0;
        for (w, d) in self.weights.iter().zip(self.dist.rows()) {
            let d = d.as_slice().expect("contiguous");
            let (lo, err) = ext.eval(d);
            value += w * lo;
            width += w * err;
        }
        (value, width)
    }
}

/// Everything kept from one `(delta, probe)` solve.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub delta: f64,
    pub probe: String,
    pub value: f64,
    pub report: SolveReport,
    pub n_steps: usize,
    pub tail_bound: f64,
    pub mather_value: f64,
    /// One entry per battery functional.
    pub closedness: Vec<f64>,
    /// Generator identity for `Phi = 1`: per-cell sup and total.
    pub generator_one: (f64, f64),
    /// Generator identity for `Phi = (int cos 2 pi x dm)^2`: per-cell sup.
    pub generator_square: f64,
    pub smoothness: Smoothness,
    /// `(sup|Du|, sup|D^2 u|)` over the arc.
    pub value_derivatives: (f64, f64),
    /// `max W1(m(s), m(l)) / sqrt(l - s)` over `0 < l - s <= 1`.
    pub holder: f64,
    pub replay_error: f64,
    pub drift_error: f64,
    pub digest: AtomDigest,
    /// Undiscounted running cost of the first slices.
    pub head_costs: Vec<f64>,
}

impl CellResult {
    pub fn delta_value(&self) -> f64 {
        self.delta * self.value
    }

    pub fn max_closedness(&self) -> f64 {
        self.closedness.iter().cloned().fold(0.0, f64::max)
    }
}

fn panel_distances_of(m: &[f64], panel: &ProbePanel, scratch: &mut W1Scratch) -> Vec<f64> {
    panel
        .probes()
        .iter()
        .map(|p| scratch.distance(m, p.measure.masses()))
        .collect()
}

/// Solves one cell and reduces the arc to its diagnostics.
pub fn solve_cell(
    model: &ModelSpec,
    panel: &ProbePanel,
    probe: usize,
    delta: f64,
    settings: &LadderSettings,
    battery: &[TestFunctional],
) -> Result<CellResult> {
    let p = &panel.probes()[probe];
    let grid = p.measure.grid();
    let gm = GridModel::new(model, grid);
    let scheme = Scheme::new(grid, settings.solve.dt, model.nu)?;
    let (arc, report) = solve_discounted_mfg(model, &p.measure, delta, &settings.solve)?;
    let dt = arc.time.dt;
    let head_len = ((settings.head_horizon / dt).round() as usize + 1).min(arc.time.n_slices());
    let head_costs: Vec<f64> = (0..head_len)
        .map(|k| {
            gm.running_cost(
                arc.m.row(k).as_slice().expect("contiguous"),
                arc.alpha.row(k).as_slice().expect("contiguous"),
            )
        })
        .collect();
    let replay_error = arc.replay_error(&scheme)?;
    let drift_error = arc.drift_error(&gm, &scheme);
    let value_derivatives = value_derivative_bounds(&arc.u, grid.h());
    let holder = holder_constant(&arc.m, dt);
    let value = arc.value;
    let n_steps = arc.time.n_steps;
    let tail_bound = arc.tail_bound;
    let occ = build_occupation(arc)?;
    let closedness = closedness_residuals(&occ, battery)?;
    let generator_one = generator_identity_residual(&occ, &TestFunctional::one())?;
    let generator_square =
        generator_identity_residual(&occ, &TestFunctional::square("sq[cos1]", TrigPoly::cos(1)))?.0;
    let smoothness = smoothness_certificate(&occ);
    let mv = mather_value(&occ, &gm);
    let atoms = occ.n_atoms();
    let mut dist = Array2::zeros((atoms, panel.len()));
    let mut scratch = W1Scratch::default();
    for (i, row) in occ.m.rows().into_iter().enumerate() {
        let d = panel_distances_of(row.as_slice().expect("contiguous"), panel, &mut scratch);
        for (q, v) in d.into_iter().enumerate() {
            dist[[i, q]] = v;
        }
    }
    Ok(CellResult {
        delta,
        probe: p.name.clone(),
        value,
        report,
        n_steps,
        tail_bound,
        mather_value: mv,
        closedness,
        generator_one,
        generator_square,
        smoothness,
        value_derivatives,
        holder,
        replay_error,
        drift_error,
        digest: AtomDigest {
            weights: occ.weights,
            dist,
        },
        head_costs,
    })
}

fn holder_constant(m: &Array2<f64>, dt: f64) -> f64 {
    let slices = m.nrows();
    let starts = ((5.0 / dt) as usize).min(slices);
    let mut best = 0.0f64;
    let mut scratch = W1Scratch::default();
    let mut lag = 1usize;
    while lag as f64 * dt <= 1.0 + 1e-12 && lag < slices {
        let scale = 1.0 / (lag as f64 * dt).sqrt();
        for s in 0..starts.min(slices - lag) {
            let d = scratch.distance(
                m.row(s).as_slice().expect("contiguous"),
                m.row(s + lag).as_slice().expect("contiguous"),
            );
            best = best.max(d * scale);
        }
        lag *= 2;
    }
    best
}

/// Solved cells of a ladder, rung-major.
#[derive(Debug, Clone)]
pub struct Ladder {
    pub deltas: Vec<f64>,
    pub probes: Vec<String>,
    pub cells: Vec<CellResult>,
    pub battery: Vec<String>,
    pub model_hash: String,
}

impl Ladder {
    pub fn cell(&self, rung: usize, probe: usize) -> &CellResult {
        &self.cells[rung * self.probes.len() + probe]
    }

    pub fn rung(&self, rung: usize) -> &[CellResult] {
        let n = self.probes.len();
        &self.cells[rung * n..(rung + 1) * n]
    }

    pub fn delta_values(&self) -> Vec<Vec<f64>> {
        (0..self.deltas.len())
            .map(|r| self.rung(r).iter().map(CellResult::delta_value).collect())
            .collect()
    }
}

/// Solves every `(delta, probe)` cell on the current rayon pool. Results are
/// ordered by rung, then by probe.
pub fn run_ladder(model: &ModelSpec, panel: &ProbePanel, settings: &LadderSettings) -> Result<Ladder> {
    settings.validate()?;
    model.validate()?;
    let battery = functional_battery();
    let tasks: Vec<(usize, usize)> = (0..settings.deltas.len())
        .flat_map(|r| (0..panel.len()).map(move |p| (r, p)))
        .collect();
    let cells = tasks
        .par_iter()
        .map(|&(r, p)| solve_cell(model, panel, p, settings.deltas[r], settings, &battery))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ladder {
        deltas: settings.deltas.clone(),
        probes: panel.probes().iter().map(|p| p.name.clone()).collect(),
        cells,
        battery: battery.into_iter().map(|f| f.name).collect(),
        model_hash: model.hash(),
    })
}

/// Richardson estimate of the ergodic constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    pub lambda: f64,
    /// Probe-averaged `delta V_delta` at the smallest and second-smallest rate.
    pub a1: f64,
    pub a2: f64,
    /// Estimate from the preceding pair of rungs, when there is one.
    pub previous: Option<f64>,
    /// Per-probe estimates.
    pub per_probe: Vec<f64>,
    pub spread: f64,
    pub flagged: bool,
}

fn richardson(d1: f64, a1: f64, d2: f64, a2: f64) -> f64 {
    // first-order error: a(delta) = a0 + c delta
    let r = d2 / d1;
    (r * a1 - a2) / (r - 1.0)
}

/// `lambda = -lim delta V_delta`, extrapolated from the two smallest rates.
/// `delta_values[r][p]` is `delta_r V_{delta_r}(probe_p)`.
pub fn estimate_lambda(deltas: &[f64], delta_values: &[Vec<f64>], tol: f64) -> Result<LambdaEstimate> {
    let n = deltas.len();
    if n < 2 || delta_values.len() != n {
        return Err(Error::param("deltas", "need at least two rungs with values"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let a1 = mean(&delta_values[n - 1]);
    let a2 = mean(&delta_values[n - 2]);
    let lambda = 0.0 - richardson(deltas[n - 1], a1, deltas[n - 2], a2);
    let previous = (n >= 3).then(|| {
        -richardson(
            deltas[n - 2],
            a2,
            deltas[n - 3],
            mean(&delta_values[n - 3]),
        )
    });
    let per_probe: Vec<f64> = (0..delta_values[n - 1].len())
        .map(|p| {
            -richardson(
                deltas[n - 1],
                delta_values[n - 1][p],
                deltas[n - 2],
                delta_values[n - 2][p],
            )
        })
        .collect();
    let lo = per_probe.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per_probe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    Ok(LambdaEstimate {
        lambda,
        a1,
        a2,
        previous,
        per_probe,
        spread,
        flagged: !(spread <= tol),
    })
}

/// `V_delta + lambda / delta`.
pub fn vbar(value: f64, delta: f64, lambda: f64) -> f64 {
    value + lambda / delta
}

/// Pairwise W1 distances between panel probes.
pub fn panel_distances(panel: &ProbePanel) -> Array2<f64> {
    let n = panel.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            d[[i, j]] = w1_masses(panel.probes()[i].measure.masses(), panel.probes()[j].measure.masses());
        }
    }
    d
}

/// Largest `|v_i - v_j| / W1(p_i, p_j)` over distinct panel points.
pub fn lipschitz_ratio(values: &[f64], dist: &Array2<f64>) -> f64 {
    let mut k = 0.0f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if dist[[i, j]] > 0.0 {
                k = k.max((values[i] - values[j]).abs() / dist[[i, j]]);
            }
        }
    }
    k
}

/// Panel values extended to all measures by the W1-Lipschitz envelopes
/// `max_p [v_p - K W1(m, p)] <= chi(m) <= min_p [v_p + K W1(m, p)]`.
/// Evaluation uses the lower envelope; the envelope width is the
/// interpolation error.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzExtension {
    pub values: Vec<f64>,
    pub k: f64,
}

impl LipschitzExtension {
    pub fn new(values: Vec<f64>, dist: &Array2<f64>) -> Self {
        let k = lipschitz_ratio(&values, dist);
        Self { values, k }
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            k: self.k,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lower(&self, dist: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(dist)
            .map(|(v, d)| v - self.k * d)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn upper(&self, dist: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(dist)
            .map(|(v, d)| v + self.k * d)
            .fold(f64::INFINITY, f64::min)
    }

    /// `(lower, upper - lower)`.
    pub fn eval(&self, dist: &[f64]) -> (f64, f64) {
        let lo = self.lower(dist);
        (lo, self.upper(dist) - lo)
    }

    pub fn eval_measure(&self, m: &GridMeasure, panel: &ProbePanel) -> (f64, f64) {
        self.eval(&panel_distances_of(m.masses(), panel, &mut W1Scratch::default()))
    }
}

/// Convergence diagnostics of a ladder.
#[derive(Debug, Clone)]
pub struct LadderReport {
    pub deltas: Vec<f64>,
    pub probes: Vec<String>,
    pub lambda: LambdaEstimate,
    /// `vbar[r][p]`
    pub vbar: Vec<Vec<f64>>,
    /// `max_p |vbar[r][p] - vbar[r + 1][p]|`
    pub gaps: Vec<f64>,
    pub gaps_monotone: bool,
    /// `max_p |vbar[r][p]|`
    pub uniform_bound: Vec<f64>,
    pub lipschitz: Vec<f64>,
    /// `max_Phi closedness` per rung and probe.
    pub closedness: Vec<Vec<f64>>,
    /// `closedness[r][p] / closedness[r + 1][p]`
    pub closedness_ratios: Vec<Vec<f64>>,
    /// `|mather_value + lambda|` per rung (max over probes).
    pub mather_gaps: Vec<f64>,
    pub checks: Vec<CheckLine>,
    pub unconverged: Vec<(f64, String)>,
}

impl LadderReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn cauchy_passed(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.name.starts_with("cauchy"))
            .all(|c| c.passed)
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ARTIFACT_VERSION} config={config_hash}");
        let _ = writeln!(s, "ladder report");
        let l = &self.lambda;
        let _ = writeln!(
            s,
            "lambda_hat = {:.10} (previous pair {}, probe spread {:.3e}{})",
            l.lambda,
            l.previous.map_or("n/a".to_string(), |v| format!("{v:.10}")),
            l.spread,
            if l.flagged { ", FLAGGED" } else { "" }
        );
        let _ = write!(s, "{:>10}", "delta");
        for p in &self.probes {
            let _ = write!(s, " {p:>16}");
        }
        let _ = writeln!(s, " {:>12} {:>12}", "gap", "sup|vbar|");
        for (r, d) in self.deltas.iter().enumerate() {
            let _ = write!(s, "{d:>10}");
            for v in &self.vbar[r] {
                let _ = write!(s, " {v:>16.9e}");
            }
            let gap = if r == 0 {
                "-".to_string()
            } else {
                format!("{:.4e}", self.gaps[r - 1])
            };
            let _ = writeln!(s, " {gap:>12} {:>12.4e}", self.uniform_bound[r]);
        }
        let _ = writeln!(s, "max closedness residual per rung and probe:");
        for (r, d) in self.deltas.iter().enumerate() {
            let _ = write!(s, "{d:>10}");
            for v in &self.closedness[r] {
                let _ = write!(s, " {v:>16.6e}");
            }
            let _ = writeln!(s);
        }
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.render());
        }
        for (d, p) in &self.unconverged {
            let _ = writeln!(s, "unconverged solve: delta={d} probe={p}");
        }
        s
    }

    /// One row per `(delta, probe)`.
    pub fn ladder_csv(&self, ladder: &Ladder, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ARTIFACT_VERSION} config={config_hash} model={}", ladder.model_hash);
        let _ = writeln!(
            s,
            "delta,probe,value,delta_value,vbar,mather_value,max_closedness,iterations,converged,n_steps"
        );
        for (r, d) in self.deltas.iter().enumerate() {
            for (p, c) in ladder.rung(r).iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{d:?},{},{:?},{:?},{:?},{:?},{:?},{},{},{}",
                    c.probe,
                    c.value,
                    c.delta_value(),
                    self.vbar[r][p],
                    c.mather_value,
                    c.max_closedness(),
                    c.report.iterations,
                    c.report.converged,
                    c.n_steps
                );
            }
        }
        s
    }

    pub fn lambda_csv(&self, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ARTIFACT_VERSION} config={config_hash}");
        let _ = writeln!(s, "quantity,value");
        let l = &self.lambda;
        let _ = writeln!(s, "lambda_hat,{:?}", l.lambda);
        let _ = writeln!(s, "a1,{:?}", l.a1);
        let _ = writeln!(s, "a2,{:?}", l.a2);
        if let Some(p) = l.previous {
            let _ = writeln!(s, "lambda_previous_pair,{p:?}");
        }
        for (name, v) in self.probes.iter().zip(&l.per_probe) {
            let _ = writeln!(s, "lambda_probe_{name},{v:?}");
        }
        let _ = writeln!(s, "probe_spread,{:?}", l.spread);
        s
    }

    /// `V_bar` against `delta` for each probe.
    pub fn summary_svg(&self, config_hash: &str) -> String {
        let (w, h, pad) = (640.0, 400.0, 60.0);
        let xs: Vec<f64> = self.deltas.iter().map(|d| d.log2()).collect();
        let (x0, x1) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let all: Vec<f64> = self.vbar.iter().flatten().cloned().collect();
        let mut y0 = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut y1 = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(y1 > y0) {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<!-- {ARTIFACT_VERSION} config={config_hash} -->"
        );
        let _ = writeln!(
            s,
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/><text x=\"{pad}\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">normalized value vs log2(delta)</text>"
        );
        for (p, name) in self.probes.iter().enumerate() {
            let c = colors[p % colors.len()];
            let pts: Vec<String> = xs
                .iter()
                .zip(&self.vbar)
                .map(|(x, row)| format!("{:.2},{:.2}", sx(*x), sy(row[p])))
                .collect();
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>",
                pts.join(" ")
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{c}\">{name}</text>",
                w - pad - 80.0,
                pad + 16.0 * p as f64
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">[{y0:.3e}, {y1:.3e}]</text>\n</svg>",
            h - 20.0
        );
        s
    }
}

/// Gaps below this are roundoff and never count as inversions.
const GAP_FLOOR: f64 = 1e-9;

/// Tabulates `V_bar`, the Cauchy gaps, bounds, Lipschitz ratios and the
/// closedness rates, with pass/fail lines.
pub fn convergence_report(panel: &ProbePanel, ladder: &Ladder, settings: &LadderSettings) -> Result<LadderReport> {
    let n_rungs = ladder.deltas.len();
    let lambda = estimate_lambda(&ladder.deltas, &ladder.delta_values(), settings.tol_lambda)?;
    let vbar_tab: Vec<Vec<f64>> = (0..n_rungs)
        .map(|r| {
            ladder
                .rung(r)
                .iter()
                .map(|c| vbar(c.value, c.delta, lambda.lambda))
                .collect()
        })
        .collect();
    let gaps: Vec<f64> = vbar_tab
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let inversions: Vec<f64> = gaps
        .windows(2)
        .filter(|g| g[1] > g[0] && g[1] > GAP_FLOOR)
        .map(|g| g[1] / g[0] - 1.0)
        .collect();
    let gaps_monotone = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.1);
    let uniform_bound: Vec<f64> = vbar_tab
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .collect();
    let dist = panel_distances(panel);
    let lipschitz: Vec<f64> = vbar_tab.iter().map(|r| lipschitz_ratio(r, &dist)).collect();
    let closedness: Vec<Vec<f64>> = (0..n_rungs)
        .map(|r| ladder.rung(r).iter().map(CellResult::max_closedness).collect())
        .collect();
    let closedness_ratios: Vec<Vec<f64>> = closedness
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| a / b).collect())
        .collect();
    let mather_gaps: Vec<f64> = (0..n_rungs)
        .map(|r| {
            ladder
                .rung(r)
                .iter()
                .map(|c| (c.mather_value + lambda.lambda).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let unconverged: Vec<(f64, String)> = ladder
        .cells
        .iter()
        .filter(|c| !c.report.converged)
        .map(|c| (c.delta, c.probe.clone()))
        .collect();

    let mut checks = Vec::new();
    checks.push(CheckLine::at_most("solves converged (count unconverged)", unconverged.len() as f64, 0.0));
    checks.push(CheckLine::at_most("lambda probe spread", lambda.spread, settings.tol_lambda));
    if let Some(prev) = lambda.previous {
        checks.push(CheckLine::at_most(
            "lambda stability across rung pairs",
            (prev - lambda.lambda).abs(),
            settings.tol_lambda,
        ));
    }
    checks.push(CheckLine::at_most(
        "cauchy gaps monotone (inversions)",
        if gaps_monotone { 0.0 } else { inversions.len() as f64 },
        0.0,
    ));
    checks.push(CheckLine::at_most(
        "cauchy final gap",
        *gaps.last().unwrap_or(&0.0),
        settings.tol_conv,
    ));
    let bmax = uniform_bound.iter().cloned().fold(0.0, f64::max);
    let bmin = uniform_bound.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound_ratio = if bmax <= settings.solve.tol_tail { 1.0 } else { bmax / bmin };
    checks.push(CheckLine::at_most("uniform bound ratio across rungs", bound_ratio, settings.bound_ratio));
    let kmax = lipschitz.iter().cloned().fold(0.0, f64::max);
    let kmin = lipschitz.iter().cloned().fold(f64::INFINITY, f64::min);
    let kratio = if kmax <= settings.solve.tol_tail { 1.0 } else { kmax / kmin };
    checks.push(CheckLine::at_most("lipschitz ratio stability across rungs", kratio, 1.5));
    let [lo, hi] = settings.closedness_band;
    let floor = 10.0 * settings.solve.tol_tail;
    let mut worst_out = 0.0f64;
    for (r, row) in closedness_ratios.iter().enumerate() {
        for (p, q) in row.iter().enumerate() {
            if closedness[r][p] <= floor && closedness[r + 1][p] <= floor {
                continue;
            }
            worst_out = worst_out.max((lo - q).max(q - hi).max(0.0));
        }
    }
    checks.push(CheckLine::at_most(
        format!("closedness halving rate outside [{lo}, {hi}]"),
        worst_out,
        0.0,
    ));
    let smooth_max = ladder
        .cells
        .iter()
        .map(|c| c.smoothness.density_c2.max(c.smoothness.drift_c1))
        .fold(0.0, f64::max);
    checks.push(CheckLine::at_most("smoothness constants", smooth_max, settings.c_smooth));
    Ok(LadderReport {
        deltas: ladder.deltas.clone(),
        probes: ladder.probes.clone(),
        lambda,
        vbar: vbar_tab,
        gaps,
        gaps_monotone,
        uniform_bound,
        lipschitz,
        closedness,
        closedness_ratios,
        mather_gaps,
        checks,
        unconverged,
    })
}

/// Mather-measure certificate of one solved cell.
pub fn certify_cell(cell: &CellResult, battery: &[String], lambda: Option<f64>, settings: &LadderSettings) -> MatherCertificate {
    let mut checks = vec![
        CheckLine::at_most("mather value vs delta * value", (cell.mather_value - cell.delta_value()).abs(), 1e-12 * cell.delta_value().abs().max(1.0)),
        CheckLine::at_most("density C2 constant", cell.smoothness.density_c2, settings.c_smooth),
        CheckLine::at_most("drift C1 constant", cell.smoothness.drift_c1, settings.c_smooth),
        CheckLine::at_most("generator identity total (phi = 1)", cell.generator_one.1.abs(), 1e-12),
        CheckLine::at_most("trajectory replay error", cell.replay_error, 1e-12),
        CheckLine::at_most("drift consistency error", cell.drift_error, 1e-10),
    ];
    checks.push(CheckLine::at_most(
        "closedness max residual",
        cell.max_closedness(),
        cell.delta * 2.0 + 10.0 * settings.solve.dt,
    ));
    MatherCertificate {
        delta: cell.delta,
        probe: cell.probe.clone(),
        closedness: battery.iter().cloned().zip(cell.closedness.iter().cloned()).collect(),
        mather_value: cell.mather_value,
        value_gap: lambda.map(|l| cell.mather_value + l),
        smoothness: cell.smoothness,
        checks,
    }
}

/// The limiting corrector on the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorEstimate {
    pub probes: Vec<String>,
    pub delta_min: f64,
    pub lambda: f64,
    /// Smallest-rate `V_bar`, extended by Lipschitz envelopes.
    pub chi: LipschitzExtension,
    /// `2 V_bar(delta_min) - V_bar(2 delta_min)`-type first-order extrapolation.
    pub extrapolated: Vec<f64>,
}

impl CorrectorEstimate {
    /// Defined only when the Cauchy test of the report passed.
    pub fn from_report(panel: &ProbePanel, report: &LadderReport) -> Result<Self> {
        if !report.cauchy_passed() {
            return Err(Error::Undefined(
                "corrector estimate needs a ladder that passed the Cauchy test".into(),
            ));
        }
        let n = report.deltas.len();
        let last = report.vbar[n - 1].clone();
        let prev = &report.vbar[n - 2];
        let r = report.deltas[n - 2] / report.deltas[n - 1];
        let extrapolated = last
            .iter()
            .zip(prev)
            .map(|(a, b)| (r * a - b) / (r - 1.0))
            .collect();
        Ok(Self {
            probes: report.probes.clone(),
            delta_min: report.deltas[n - 1],
            lambda: report.lambda.lambda,
            chi: LipschitzExtension::new(last, &panel_distances(panel)),
            extrapolated,
        })
    }
}

/// `count` drifts `a_0 + sum_{k=1,2} (a_k cos 2 pi k x + b_k sin 2 pi k x)`
/// with coefficients uniform in `[-2, 2]`.
pub fn random_drifts(seed: u64, count: usize) -> Vec<TrigPoly> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a0 = rng.gen_range(-2.0..=2.0);
            let mut terms = vec![(0, a0, 0.0)];
            for k in 1..=2 {
                let a = rng.gen_range(-2.0..=2.0);
                let b = rng.gen_range(-2.0..=2.0);
                terms.push((k, a, b));
            }
            TrigPoly::new(terms)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionOutcome {
    pub worst_slack: f64,
    /// Index into the drift list of the worst sample.
    pub worst_drift: usize,
    pub slacks: Vec<f64>,
    /// Largest envelope width met at an end point.
    pub interpolation_error: f64,
}

/// Worst `int_0^h cost dt + chi(m(h)) + lambda h - chi(m0)` over constant-in-time
/// drift samples. The step is refined per sample until the drift satisfies the
/// scheme's transport bound.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_check(
    model: &ModelSpec,
    chi: &LipschitzExtension,
    panel: &ProbePanel,
    m0: &GridMeasure,
    drifts: &[TrigPoly],
    h: f64,
    lambda: f64,
    dt: f64,
) -> Result<SubsolutionOutcome> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::param("h", format!("must lie in (0, 1], got {h}")));
    }
    if drifts.is_empty() {
        return Err(Error::param("drifts", "need at least one sample"));
    }
    let grid = m0.grid();
    let gm = GridModel::new(model, grid);
    let (chi0, err0) = chi.eval_measure(m0, panel);
    let mut slacks = Vec::with_capacity(drifts.len());
    let mut interp = err0;
    for drift in drifts {
        let alpha = drift.on_grid(grid);
        let sup = alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut steps = (h / dt).round().max(1.0) as usize;
        let mut scheme = Scheme::new(grid, h / steps as f64, model.nu)?;
        while sup > scheme.max_drift() {
            steps *= 2;
            scheme = Scheme::new(grid, h / steps as f64, model.nu)?;
        }
        let step = scheme.dt();
        let mut m = m0.masses().to_vec();
        let mut next = vec![0.0; m.len()];
        let mut cost = 0.0;
        for _ in 0..steps {
            cost += step * gm.running_cost(&m, &alpha);
            scheme.fp_step_raw(&m, &alpha, &mut next);
            std::mem::swap(&mut m, &mut next);
        }
        let (chi_h, err) = chi.eval(&panel_distances_of(&m, panel, &mut W1Scratch::default()));
        interp = interp.max(err);
        slacks.push(cost + chi_h + lambda * h - chi0);
    }
    let (worst_drift, worst_slack) = slacks
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, s)| if s < a.1 { (i, s) } else { a });
    Ok(SubsolutionOutcome {
        worst_slack,
        worst_drift,
        slacks,
        interpolation_error: interp,
    })
}

/// `|chi(m0) - [int_0^h cost dt + chi(m(h)) + lambda h]|` along a solved arc,
/// with the envelope width at `m(h)`.
pub fn corrector_check(
    chi: &LipschitzExtension,
    cell: &CellResult,
    lambda: f64,
    h: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    let k = (h / dt).round() as usize;
    if k + 1 > cell.head_costs.len() || k >= cell.digest.dist.nrows() {
        return Err(Error::param("h", format!("{h} exceeds the stored arc prefix")));
    }
    let cost: f64 = cell.head_costs[..k].iter().map(|c| c * dt).sum();
    let d0 = cell.digest.dist.row(0);
    let dh = cell.digest.dist.row(k);
    let (chi0, e0) = chi.eval(d0.as_slice().expect("contiguous"));
    let (chih, eh) = chi.eval(dh.as_slice().expect("contiguous"));
    Ok(((chi0 - (cost + chih + lambda * h)).abs(), e0.max(eh)))
}

/// `V_bar(m0) - chi(m0) + sum_i w_i chi(m_i)` for the occupation measure of
/// the same cell; also returns the weighted envelope width.
pub fn lower_bound_check(chi: &LipschitzExtension, cell: &CellResult, vbar_m0: f64) -> (f64, f64) {
    let (chi0, e0) = chi.eval(cell.digest.dist.row(0).as_slice().expect("contiguous"));
    let (integral, width) = cell.digest.integrate(chi);
    (vbar_m0 - chi0 + integral, e0 + width)
}

/// `sum_i w_i V_bar_delta(m_i)` over an occupation measure of another rung.
pub fn vbar_integral_check(vbar: &LipschitzExtension, occ: &AtomDigest) -> (f64, f64) {
    occ.integrate(vbar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SMinusOutcome {
    pub worst_slack: f64,
    pub max_integral: f64,
    pub interpolation_error: f64,
    pub passed: bool,
}

/// Both conditions of the subsolution class: nonnegative subsolution slack
/// and nonpositive integral against each smooth occupation measure.
pub fn s_minus_membership(
    chi: &LipschitzExtension,
    occs: &[&AtomDigest],
    subsolution: &[SubsolutionOutcome],
    tol: f64,
) -> SMinusOutcome {
    let worst_slack = subsolution
        .iter()
        .map(|s| s.worst_slack)
        .fold(f64::INFINITY, f64::min);
    let mut max_integral = f64::NEG_INFINITY;
    let mut interp = subsolution
        .iter()
        .map(|s| s.interpolation_error)
        .fold(0.0, f64::max);
    for occ in occs {
        let (v, w) = occ.integrate(chi);
        max_integral = max_integral.max(v);
        interp = interp.max(w);
    }
    SMinusOutcome {
        worst_slack,
        max_integral,
        interpolation_error: interp,
        passed: worst_slack >= -tol && max_integral <= tol,
    }
}

/// `U^T(0, m) + lambda T` on the panel for increasing horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTimeReport {
    pub horizons: Vec<f64>,
    /// `values[t][p]`
    pub values: Vec<Vec<f64>>,
    /// `max_p |values[t + 1][p] - values[t][p]|`
    pub gaps: Vec<f64>,
    /// `values[last][p] - chi[p]`
    pub offsets: Vec<f64>,
    pub offset_spread: f64,
    pub converged: bool,
}

pub fn long_time_check(
    model: &ModelSpec,
    panel: &ProbePanel,
    opts: &SolveOptions,
    horizons: &[f64],
    lambda: f64,
    chi: &[f64],
) -> Result<LongTimeReport> {
    if horizons.len() < 2 {
        return Err(Error::param("horizons", "need at least two horizons"));
    }
    let tasks: Vec<(usize, usize)> = (0..horizons.len())
        .flat_map(|t| (0..panel.len()).map(move |p| (t, p)))
        .collect();
    let solved = tasks
        .par_iter()
        .map(|&(t, p)| {
            finite_horizon_value(model, &panel.probes()[p].measure, horizons[t], opts)
                .map(|(arc, rep)| (arc.value + lambda * arc.horizon(), rep.converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = panel.len();
    let values: Vec<Vec<f64>> = (0..horizons.len())
        .map(|t| solved[t * n..(t + 1) * n].iter().map(|v| v.0).collect())
        .collect();
    let gaps: Vec<f64> = values
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let last = values.last().expect("two horizons");
    let offsets: Vec<f64> = last.iter().zip(chi).map(|(a, b)| a - b).collect();
    let lo = offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(LongTimeReport {
        horizons: horizons.to_vec(),
        values,
        gaps,
        offsets,
        offset_spread: hi - lo,
        converged: solved.iter().all(|v| v.1),
    })
}

/// W1 distance from `m` to every panel probe.
pub fn distances_to_panel(m: &GridMeasure, panel: &ProbePanel) -> Result<Vec<f64>> {
    panel.probes().iter().map(|p| w1_distance(m, &p.measure)).collect()
}
