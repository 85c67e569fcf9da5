//! Discounted MFG solves by fictitious play, the discounted value, the
//! dynamic programming check and the undiscounted finite-horizon value.
//!
//! Time integrals against `e^{-delta t}` use one rule everywhere: slice `k < K`
//! carries the weight `W_k = e^{-delta t_k} (1 - e^{-delta dt}) / delta`, and
//! the last slice carries the stationary tail `W_K = e^{-delta T} / delta`
//! with its drift frozen at zero, so that `sum_k W_k = 1 / delta` exactly.
//! The HJB terminal datum is `u(T) = 0`; the horizon is long enough for the
//! neglected tail to stay below `tol_tail`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{GridMeasure, TorusGrid, W1Scratch};
use crate::model::{GridModel, ModelSpec};
use crate::ARTIFACT_VERSION;
use crate::pde::{fp_forward_into, hjb_backward_into, step_weights, Scheme, TimeGrid};

/// Averaging rule for the fictitious-play update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Damping {
    /// `omega_k = 1 / (k + 1)`
    Harmonic,
    /// `omega_k = omega`
    Constant { omega: f64 },
}

impl Damping {
    pub fn omega(&self, k: usize) -> f64 {
        match *self {
            Damping::Harmonic => 1.0 / (k as f64 + 1.0),
            Damping::Constant { omega } => omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub dt: f64,
    /// Stop once `sup_t W1` between successive averaged paths is below this.
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Target for the neglected tail `e^{-delta T} M / delta`.
    pub tol_tail: f64,
    pub damping: Damping,
    /// Fixed horizon; when absent it is chosen from `tol_tail`.
    pub horizon: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            tol_fp: 1e-6,
            max_iter: 500,
            tol_tail: 1e-6,
            damping: Damping::Harmonic,
            horizon: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::param("dt", format!("must lie in (0, 0.1], got {}", self.dt)));
        }
        if !(self.tol_fp > 0.0) {
            return Err(Error::param("tol_fp", "must be > 0"));
        }
        if !(self.tol_tail > 0.0) {
            return Err(Error::param("tol_tail", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be >= 1"));
        }
        if let Damping::Constant { omega } = self.damping {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(Error::param("damping.omega", "must lie in (0, 1]"));
            }
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("horizon", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Smallest `T >= dt` with `e^{-delta T} m_cost / delta <= tol_tail`.
pub fn horizon_for(delta: f64, tol_tail: f64, m_cost: f64, dt: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDiscount(delta));
    }
    let t = (m_cost / (delta * tol_tail)).ln() / delta;
    Ok(if t.is_finite() { t.max(dt) } else { dt })
}

/// Quadrature weights of the discounted integral on `n_steps + 1` slices.
/// With `delta = 0` these are `dt` on `[0, T)` and `0` at `T`.
pub fn discount_weights(delta: f64, dt: f64, n_steps: usize) -> Vec<f64> {
    let (decay, kappa) = step_weights(delta, dt);
    let mut w = Vec::with_capacity(n_steps + 1);
    let mut d = 1.0;
    for _ in 0..n_steps {
        w.push(d * kappa);
        d *= decay;
    }
    w.push(if delta == 0.0 { 0.0 } else { (-delta * dt * n_steps as f64).exp() / delta });
    w
}

/// Running cost `sum_j H*(x_j, alpha_j) m_j + F(m)` of every slice.
pub fn running_costs(model: &GridModel, m: &Array2<f64>, alpha: &Array2<f64>) -> Vec<f64> {
    m.rows()
        .into_iter()
        .zip(alpha.rows())
        .map(|(mr, ar)| {
            model.running_cost(
                mr.as_slice().expect("contiguous"),
                ar.as_slice().expect("contiguous"),
            )
        })
        .collect()
}

/// Runs the FP equation from `m0` under `alpha` (one row per slice).
pub fn rollout(scheme: &Scheme, m0: &GridMeasure, alpha: &Array2<f64>) -> Result<Array2<f64>> {
    scheme.grid().check_same(&m0.grid())?;
    let mut m = Array2::zeros(alpha.raw_dim());
    fp_forward_into(scheme, m0.masses(), alpha, &mut m)?;
    Ok(m)
}

/// Discounted cost of the admissible path generated by `alpha` from `m0`.
pub fn path_cost(
    model: &GridModel,
    scheme: &Scheme,
    m0: &GridMeasure,
    alpha: &Array2<f64>,
    delta: f64,
) -> Result<f64> {
    let m = rollout(scheme, m0, alpha)?;
    let w = discount_weights(delta, scheme.dt(), alpha.nrows() - 1);
    Ok(dot(&w, &running_costs(model, &m, alpha)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A solved trajectory `(t_k, m_k, alpha_k, u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryArc {
    pub delta: f64,
    pub grid: TorusGrid,
    pub time: TimeGrid,
    pub nu: f64,
    pub model_hash: String,
    pub m: Array2<f64>,
    pub alpha: Array2<f64>,
    pub u: Array2<f64>,
    pub value: f64,
    /// `e^{-delta T} M / delta` (zero for finite-horizon arcs).
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArcMeta {
    version: String,
    config_hash: Option<String>,
    model_hash: String,
    delta: f64,
    nu: f64,
    n_cells: usize,
    dt: f64,
    n_steps: usize,
    horizon: f64,
    value: f64,
    tail_bound: f64,
}

impl TrajectoryArc {
    pub fn horizon(&self) -> f64 {
        self.time.horizon()
    }

    pub fn measure(&self, k: usize) -> GridMeasure {
        GridMeasure::from_solver(self.grid, self.m.row(k).to_vec())
    }

    /// Quadrature weights shared by the value and the occupation measure.
    pub fn weights(&self) -> Vec<f64> {
        discount_weights(self.delta, self.time.dt, self.time.n_steps)
    }

    pub fn running_costs(&self, model: &GridModel) -> Vec<f64> {
        running_costs(model, &self.m, &self.alpha)
    }

    /// Largest gap between `m_{k+1}` and a fresh FP step from `m_k`.
    pub fn replay_error(&self, scheme: &Scheme) -> Result<f64> {
        scheme.grid().check_same(&self.grid)?;
        let mut next = vec![0.0; self.grid.n_cells()];
        let mut worst = 0.0f64;
        for k in 0..self.time.n_steps {
            let a = self.alpha.row(k);
            let a = a.as_slice().expect("contiguous");
            scheme.check_cfl(a)?;
            scheme.fp_step_raw(self.m.row(k).as_slice().expect("contiguous"), a, &mut next);
            for (x, y) in next.iter().zip(self.m.row(k + 1)) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }

    /// Largest gap between `alpha_k` and `D_p H` of the value gradient that
    /// the backward step derives from `u_{k+1}`.
    pub fn drift_error(&self, model: &GridModel, scheme: &Scheme) -> f64 {
        let n = self.grid.n_cells();
        let mut ubar = vec![0.0; n];
        let mut uk = vec![0.0; n];
        let mut ak = vec![0.0; n];
        let flat = vec![0.0; n];
        let mut worst = 0.0f64;
        for k in 0..self.time.n_steps {
            scheme.hjb_step_raw(
                model,
                self.delta,
                self.u.row(k + 1).as_slice().expect("contiguous"),
                &flat,
                &mut ubar,
                &mut uk,
                &mut ak,
            );
            for (a, b) in ak.iter().zip(self.alpha.row(k)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// `sup_k (sup|alpha_k| + sup|D alpha_k|)`.
    pub fn drift_c1_bound(&self) -> f64 {
        let h = self.grid.h();
        self.alpha
            .rows()
            .into_iter()
            .map(|r| {
                let (s0, s1, _) =
                    crate::measure::sup_norms_with_derivatives(r.as_slice().expect("contiguous"), h);
                s0 + s1
            })
            .fold(0.0, f64::max)
    }

    /// Writes `meta.json`, `m.csv`, `alpha.csv` and `u.csv` into `dir`.
    pub fn save(&self, dir: &Path, config_hash: Option<&str>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = ArcMeta {
            version: ARTIFACT_VERSION.to_string(),
            config_hash: config_hash.map(str::to_string),
            model_hash: self.model_hash.clone(),
            delta: self.delta,
            nu: self.nu,
            n_cells: self.grid.n_cells(),
            dt: self.time.dt,
            n_steps: self.time.n_steps,
            horizon: self.horizon(),
            value: self.value,
            tail_bound: self.tail_bound,
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))?;
        let tag = format!(
            "# {} config={} model={}",
            ARTIFACT_VERSION,
            config_hash.unwrap_or("none"),
            self.model_hash
        );
        for (name, arr) in [("m.csv", &self.m), ("alpha.csv", &self.alpha), ("u.csv", &self.u)] {
            write_matrix(&dir.join(name), &tag, arr, self.time.dt)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ArcMeta = serde_json::from_str(&text)?;
        let grid = TorusGrid::new(meta.n_cells)?;
        let time = TimeGrid::new(meta.dt, meta.n_steps)?;
        let shape = (meta.n_steps + 1, meta.n_cells);
        Ok(Self {
            delta: meta.delta,
            grid,
            time,
            nu: meta.nu,
            model_hash: meta.model_hash,
            m: read_matrix(&dir.join("m.csv"), shape)?,
            alpha: read_matrix(&dir.join("alpha.csv"), shape)?,
            u: read_matrix(&dir.join("u.csv"), shape)?,
            value: meta.value,
            tail_bound: meta.tail_bound,
        })
    }
}

fn write_matrix(path: &Path, tag: &str, a: &Array2<f64>, dt: f64) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{tag}").map_err(io)?;
    write!(w, "t").map_err(io)?;
    for j in 0..a.ncols() {
        write!(w, ",c{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (k, row) in a.rows().into_iter().enumerate() {
        write!(w, "{}", k as f64 * dt).map_err(io)?;
        for v in row {
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_matrix(path: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut data = Vec::with_capacity(shape.0 * shape.1);
    let rows = text.lines().filter(|l| !l.starts_with('#')).skip(1);
    let mut count = 0;
    for (i, line) in rows.enumerate() {
        let before = data.len();
        for field in line.split(',').skip(1) {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {i}: `{field}`: {e}")))?,
            );
        }
        if data.len() - before != shape.1 {
            return Err(bad(format!("row {i} has {} values, expected {}", data.len() - before, shape.1)));
        }
        count += 1;
    }
    if count != shape.0 {
        return Err(bad(format!("{count} rows, expected {}", shape.0)));
    }
    Array2::from_shape_vec(shape, data).map_err(|e| bad(e.to_string()))
}

/// Convergence record of one fictitious-play run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `sup_t W1` between successive averaged paths, one entry per iteration.
    pub residuals: Vec<f64>,
    /// Cost of each iteration's best-response path.
    pub values: Vec<f64>,
    pub converged: bool,
}

/// Solves the discounted MFG system from `m0`.
pub fn solve_discounted_mfg(
    model: &ModelSpec,
    m0: &GridMeasure,
    delta: f64,
    opts: &SolveOptions,
) -> Result<(TrajectoryArc, SolveReport)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDiscount(delta));
    }
    opts.validate()?;
    model.validate()?;
    let grid = m0.grid();
    let scheme = Scheme::new(grid, opts.dt, model.nu)?;
    let m_cost = model.running_cost_bound(scheme.max_drift());
    let horizon = match opts.horizon {
        Some(t) => t,
        None => horizon_for(delta, opts.tol_tail, m_cost, opts.dt)?,
    };
    let time = TimeGrid::covering(opts.dt, horizon)?;
    let gm = GridModel::new(model, grid);
    let tail = (-delta * time.horizon()).exp() * m_cost / delta;
    fictitious_play(&gm, &scheme, m0, delta, time, opts, tail)
}

/// Undiscounted value `U^T(0, m0)` with `u(T) = 0`.
pub fn finite_horizon_value(
    model: &ModelSpec,
    m0: &GridMeasure,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<(TrajectoryArc, SolveReport)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::param("horizon", format!("must be > 0, got {horizon}")));
    }
    opts.validate()?;
    model.validate()?;
    let grid = m0.grid();
    let scheme = Scheme::new(grid, opts.dt, model.nu)?;
    let time = TimeGrid::covering(opts.dt, horizon)?;
    let gm = GridModel::new(model, grid);
    fictitious_play(&gm, &scheme, m0, 0.0, time, opts, 0.0)
}

fn fictitious_play(
    gm: &GridModel,
    scheme: &Scheme,
    m0: &GridMeasure,
    delta: f64,
    time: TimeGrid,
    opts: &SolveOptions,
    tail_bound: f64,
) -> Result<(TrajectoryArc, SolveReport)> {
    let n = scheme.grid().n_cells();
    let slices = time.n_slices();
    let weights = discount_weights(delta, time.dt, time.n_steps);
    let mut alpha = Array2::<f64>::zeros((slices, n));
    let mut u = Array2::<f64>::zeros((slices, n));
    let mut m_tilde = Array2::<f64>::zeros((slices, n));
    fp_forward_into(scheme, m0.masses(), &alpha, &mut m_tilde)?;
    let mut m_bar = m_tilde.clone();
    let terminal = vec![0.0; n];
    let mut report = SolveReport {
        iterations: 0,
        residuals: Vec::new(),
        values: Vec::new(),
        converged: false,
    };
    let mut w1 = W1Scratch::default();
    for k in 1..=opts.max_iter {
        hjb_backward_into(gm, scheme, &m_bar, delta, &terminal, &mut u, &mut alpha)?;
        fp_forward_into(scheme, m0.masses(), &alpha, &mut m_tilde)?;
        let omega = opts.damping.omega(k);
        let mut gap = 0.0f64;
        for (mt, mb) in m_tilde.rows().into_iter().zip(m_bar.rows()) {
            gap = gap.max(w1.distance(
                mt.as_slice().expect("contiguous"),
                mb.as_slice().expect("contiguous"),
            ));
        }
        let residual = omega * gap;
        m_bar.zip_mut_with(&m_tilde, |b, t| *b += omega * (*t - *b));
        report.iterations = k;
        report.residuals.push(residual);
        report
            .values
            .push(dot(&weights, &running_costs(gm, &m_tilde, &alpha)));
        if residual <= opts.tol_fp {
            report.converged = true;
            break;
        }
    }
    let arc = TrajectoryArc {
        delta,
        grid: scheme.grid(),
        time,
        nu: scheme.nu(),
        model_hash: gm.spec().hash(),
        value: *report.values.last().expect("at least one iteration"),
        m: m_tilde,
        alpha,
        u,
        tail_bound,
    };
    Ok((arc, report))
}

/// `|V(m0) - [sum_{t_k < t} W_k c_k + e^{-delta t} V(m(t))]|` with a fresh
/// solve from `m(t)`. Returns the residual and the nested solve's report.
pub fn dpp_residual(
    model: &ModelSpec,
    arc: &TrajectoryArc,
    t: f64,
    opts: &SolveOptions,
) -> Result<(f64, SolveReport)> {
    let k = (t / arc.time.dt).round() as usize;
    if !(t >= 0.0) || k > arc.time.n_steps / 2 || ((k as f64) * arc.time.dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::param(
            "t",
            format!("{t} is not a grid time in [0, T/2] for this arc"),
        ));
    }
    let gm = GridModel::new(model, arc.grid);
    let w = arc.weights();
    let c = arc.running_costs(&gm);
    let head = dot(&w[..k], &c[..k]);
    let (rest, report) = solve_discounted_mfg(model, &arc.measure(k), arc.delta, opts)?;
    let value = head + (-arc.delta * arc.time.t(k)).exp() * rest.value;
    Ok(((arc.value - value).abs(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{make_probe, ProbeSpec};

    fn quick() -> SolveOptions {
        SolveOptions {
            dt: 0.01,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn horizon_formula() {
        let t = horizon_for(0.1, 1e-6, 1.0, 0.01).unwrap();
        assert!((t - 10.0 * 1e7f64.ln()).abs() < 1e-9);
        let grid = TimeGrid::covering(0.01, t).unwrap();
        assert!((-0.1 * grid.horizon()).exp() / 0.1 <= 1e-6);
        assert_eq!(horizon_for(0.1, 1e9, 1.0, 0.01).unwrap(), 0.01);
        let half = horizon_for(0.05, 1e-6, 1.0, 0.01).unwrap();
        assert!(half > 2.0 * t);
        assert!(horizon_for(0.0, 1e-6, 1.0, 0.01).is_err());
    }

    #[test]
    fn weights_sum_to_inverse_discount() {
        for delta in [0.025, 0.4, 2.0] {
            let w = discount_weights(delta, 0.005, 777);
            let s: f64 = w.iter().sum();
            assert!((s * delta - 1.0).abs() < 1e-12);
        }
        let w = discount_weights(0.0, 0.1, 10);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_cost_is_stationary() {
        let g = TorusGrid::new(16).unwrap();
        let m0 = make_probe(g, &ProbeSpec::Bump { kappa: 3.0, center: 0.2 }).unwrap();
        let (arc, rep) = solve_discounted_mfg(&ModelSpec::zero_cost(), &m0, 0.5, &quick()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(arc.value, 0.0);
        assert!(arc.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn constant_coupling_gives_c_over_delta() {
        let g = TorusGrid::new(16).unwrap();
        let m0 = make_probe(g, &ProbeSpec::Cosine { amplitude: 0.5 }).unwrap();
        for delta in [0.2, 1.0] {
            let (arc, _) =
                solve_discounted_mfg(&ModelSpec::constant_coupling(0.7), &m0, delta, &quick()).unwrap();
            assert!((arc.value * delta / 0.7 - 1.0).abs() < 1e-12, "{}", arc.value);
        }
    }

    #[test]
    fn arc_round_trips_bit_exactly() {
        let g = TorusGrid::new(8).unwrap();
        let m0 = make_probe(g, &ProbeSpec::Bump { kappa: 2.0, center: 0.6 }).unwrap();
        let opts = SolveOptions {
            horizon: Some(0.5),
            dt: 0.02,
            ..SolveOptions::default()
        };
        let (arc, _) = solve_discounted_mfg(&ModelSpec::default(), &m0, 1.0, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        arc.save(dir.path(), Some("abc")).unwrap();
        let back = TrajectoryArc::load(dir.path()).unwrap();
        assert_eq!(arc, back);
    }
}
