//! Discounted occupation measures of solved arcs, their reduction to a
//! (measure, drift density) pair, and the Mather-measure diagnostics.
//!
//! Generator pairings use the time-stepping operators themselves. One FP step
//! reads `m_{k+1} = m_k + dt L^{-1} (nu D_hh m_k + (alpha m_k)'_c)` with `L`
//! the implicit diffusion matrix, so test functions are paired with the
//! generator after one application of the symmetric `L^{-1}`. With this
//! pairing the weighted generator sums of linear functionals telescope exactly
//! along an arc.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::measure::{sup_norms_with_derivatives, GridMeasure, TorusGrid};
use crate::mfg::TrajectoryArc;
use crate::model::{GridModel, TestFunctional, TrigPoly};
use crate::pde::{central_gradient, PeriodicTridiag, Scheme};
use crate::ARTIFACT_VERSION;

/// Weighted atoms `(w_i, m_i, alpha_i)` sampled at every slice of an arc.
#[derive(Debug, Clone)]
pub struct OccupationMeasure {
    pub delta: f64,
    pub grid: TorusGrid,
    pub dt: f64,
    pub nu: f64,
    pub model_hash: String,
    /// `w_i`, summing to one.
    pub weights: Vec<f64>,
    pub m: Array2<f64>,
    pub alpha: Array2<f64>,
    /// `max_i (sup|alpha_i| + sup|D alpha_i|)`
    pub drift_bound: f64,
}

/// First marginal `mu` and the drift density `dp_1 / d(m x mu)`.
#[derive(Debug, Clone, Copy)]
pub struct MatherReduction<'a> {
    pub mu: &'a [f64],
    pub drift_density: &'a Array2<f64>,
}

impl<'a> MatherReduction<'a> {
    pub fn n_atoms(&self) -> usize {
        self.mu.len()
    }

    /// `p_1` restricted to atom `i`: the measure `alpha_i m_i`, scaled by `mu_i`.
    pub fn momentum(&self, occ: &OccupationMeasure, i: usize) -> Vec<f64> {
        occ.m
            .row(i)
            .iter()
            .zip(self.drift_density.row(i))
            .map(|(m, a)| self.mu[i] * m * a)
            .collect()
    }
}

/// Atoms of a discounted arc (`delta > 0`).
pub fn build_occupation(arc: TrajectoryArc) -> Result<OccupationMeasure> {
    if !(arc.delta > 0.0) {
        return Err(Error::InvalidDiscount(arc.delta));
    }
    let raw: Vec<f64> = arc.weights().iter().map(|w| arc.delta * w).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift_bound = arc.drift_c1_bound();
    Ok(OccupationMeasure {
        delta: arc.delta,
        grid: arc.grid,
        dt: arc.time.dt,
        nu: arc.nu,
        model_hash: arc.model_hash,
        weights,
        m: arc.m,
        alpha: arc.alpha,
        drift_bound,
    })
}

impl OccupationMeasure {
    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    pub fn atom(&self, i: usize) -> (f64, GridMeasure, Vec<f64>) {
        (
            self.weights[i],
            GridMeasure::from_solver(self.grid, self.m.row(i).to_vec()),
            self.alpha.row(i).to_vec(),
        )
    }

    pub fn reduction(&self) -> MatherReduction<'_> {
        MatherReduction {
            mu: &self.weights,
            drift_density: &self.alpha,
        }
    }

    /// `sum_i w_i f(m_i, alpha_i)`.
    pub fn average(&self, mut f: impl FnMut(ArrayView1<f64>, ArrayView1<f64>) -> f64) -> f64 {
        self.weights
            .iter()
            .zip(self.m.rows())
            .zip(self.alpha.rows())
            .map(|((w, m), a)| w * f(m, a))
            .sum()
    }

    fn scheme(&self) -> Result<Scheme> {
        Scheme::new(self.grid, self.dt, self.nu)
    }

    /// One row per atom: `w`, then the cell masses, then the drift values.
    pub fn write_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let n = self.grid.n_cells();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {ARTIFACT_VERSION} config={config_hash} model={} delta={:?}",
            self.model_hash, self.delta
        );
        s.push('w');
        for j in 0..n {
            let _ = write!(s, ",m{j}");
        }
        for j in 0..n {
            let _ = write!(s, ",a{j}");
        }
        s.push('\n');
        for i in 0..self.n_atoms() {
            let _ = write!(s, "{:?}", self.weights[i]);
            for v in self.m.row(i) {
                let _ = write!(s, ",{v:?}");
            }
            for v in self.alpha.row(i) {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// `sum_i w_i [sum_j H*(x_j, alpha_ij) m_ij + F(m_i)]`.
pub fn mather_value(occ: &OccupationMeasure, model: &GridModel) -> f64 {
    occ.average(|m, a| {
        model.running_cost(
            m.as_slice().expect("contiguous"),
            a.as_slice().expect("contiguous"),
        )
    })
}

/// Test function `psi` after the implicit smoothing, with the two stencils the
/// generator needs.
struct PairedObservable {
    values: Vec<f64>,
    /// `nu D_hh (L^{-1} psi)`
    lap: Vec<f64>,
    /// `D_c (L^{-1} psi)`
    grad: Vec<f64>,
}

fn paired(psi: &TrigPoly, scheme: &Scheme, implicit: &PeriodicTridiag) -> PairedObservable {
    let grid = scheme.grid();
    let h = grid.h();
    let values = psi.on_grid(grid);
    let mut s = values.clone();
    implicit.solve(&mut s);
    let n = s.len();
    let lap = (0..n)
        .map(|j| scheme.nu() * (s[(j + 1) % n] - 2.0 * s[j] + s[(j + n - 1) % n]) / (h * h))
        .collect();
    PairedObservable {
        values,
        lap,
        grad: central_gradient(&s, h),
    }
}

/// Per atom: observable values `z_l = sum_j psi_l m_j` and generator pairings
/// `g_l = sum_j m_j [nu D_hh psi_l - alpha_j D_c psi_l]`.
fn observable_tables(
    occ: &OccupationMeasure,
    observables: &[TrigPoly],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let scheme = occ.scheme()?;
    let implicit = PeriodicTridiag::new(
        occ.grid.n_cells(),
        scheme.dt() * (scheme.nu() - scheme.eps()),
        occ.grid.h(),
    );
    let obs: Vec<PairedObservable> = observables
        .iter()
        .map(|p| paired(p, &scheme, &implicit))
        .collect();
    let atoms = occ.n_atoms();
    let mut z = Array2::zeros((atoms, obs.len()));
    let mut g = Array2::zeros((atoms, obs.len()));
    for i in 0..atoms {
        let m = occ.m.row(i);
        let a = occ.alpha.row(i);
        for (l, o) in obs.iter().enumerate() {
            let mut zl = 0.0;
            let mut gl = 0.0;
            for j in 0..m.len() {
                zl += o.values[j] * m[j];
                gl += m[j] * (o.lap[j] - a[j] * o.grad[j]);
            }
            z[[i, l]] = zl;
            g[[i, l]] = gl;
        }
    }
    Ok((z, g))
}

/// `|sum_i w_i sum_j m_ij [div D_m Phi - D_m Phi alpha_ij]|` for each functional.
///
/// All functionals are cylindrical over a common set of observables, so the
/// atoms are scanned once.
pub fn closedness_residuals(occ: &OccupationMeasure, battery: &[TestFunctional]) -> Result<Vec<f64>> {
    let mut observables: Vec<TrigPoly> = Vec::new();
    let index: Vec<Vec<usize>> = battery
        .iter()
        .map(|phi| {
            phi.observables
                .iter()
                .map(|p| match observables.iter().position(|q| q == p) {
                    Some(i) => i,
                    None => {
                        observables.push(p.clone());
                        observables.len() - 1
                    }
                })
                .collect()
        })
        .collect();
    let (z, g) = observable_tables(occ, &observables)?;
    let mut acc = vec![0.0; battery.len()];
    let mut zi = Vec::new();
    let mut grad = Vec::new();
    for i in 0..occ.n_atoms() {
        let w = occ.weights[i];
        for (f, (phi, idx)) in battery.iter().zip(&index).enumerate() {
            zi.clear();
            zi.extend(idx.iter().map(|&l| z[[i, l]]));
            grad.resize(zi.len(), 0.0);
            phi.outer_grad_into(&zi, &mut grad);
            let gen: f64 = grad.iter().zip(idx).map(|(d, &l)| d * g[[i, l]]).sum();
            acc[f] += w * gen;
        }
    }
    Ok(acc.into_iter().map(f64::abs).collect())
}

pub fn closedness_residual(occ: &OccupationMeasure, phi: &TestFunctional) -> Result<f64> {
    Ok(closedness_residuals(occ, std::slice::from_ref(phi))?[0])
}

/// Weighted generator field `sum_i w_i Phi(m_i) L^{-1}[nu D_hh m_i + (alpha_i m_i)'_c]`.
pub fn generator_field(occ: &OccupationMeasure, phi: &TestFunctional) -> Result<Vec<f64>> {
    let scheme = occ.scheme()?;
    let n = occ.grid.n_cells();
    let h = occ.grid.h();
    let implicit = PeriodicTridiag::new(n, scheme.dt() * (scheme.nu() - scheme.eps()), h);
    let tables: Vec<Vec<f64>> = phi.observables.iter().map(|p| p.on_grid(occ.grid)).collect();
    let mut acc = vec![0.0; n];
    let mut z = vec![0.0; tables.len()];
    for i in 0..occ.n_atoms() {
        let m = occ.m.row(i);
        let a = occ.alpha.row(i);
        for (zl, t) in z.iter_mut().zip(&tables) {
            *zl = t.iter().zip(m.iter()).map(|(x, y)| x * y).sum();
        }
        let value = phi.outer_value(&z);
        if value == 0.0 {
            continue;
        }
        let c = occ.weights[i] * value;
        for j in 0..n {
            let l = (j + n - 1) % n;
            let r = (j + 1) % n;
            acc[j] += c
                * (scheme.nu() * (m[r] - 2.0 * m[j] + m[l]) / (h * h)
                    + (a[r] * m[r] - a[l] * m[l]) / (2.0 * h));
        }
    }
    // L^{-1} is linear, so one solve covers every atom
    implicit.solve(&mut acc);
    Ok(acc)
}

/// Residual of the generator identity, as a density: `sup_j |field_j| / h`.
/// The total `sum_j field_j` vanishes by mass conservation and is returned
/// second.
pub fn generator_identity_residual(occ: &OccupationMeasure, phi: &TestFunctional) -> Result<(f64, f64)> {
    let field = generator_field(occ, phi)?;
    let h = occ.grid.h();
    let sup = field.iter().fold(0.0f64, |a, v| a.max(v.abs())) / h;
    Ok((sup, field.iter().sum()))
}

/// Smoothness constants of the atoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    /// `max_i` of the discrete C2 norm of the density of `m_i`.
    pub density_c2: f64,
    /// `max_i (sup|alpha_i| + sup|D alpha_i|)`.
    pub drift_c1: f64,
}

pub fn smoothness_certificate(occ: &OccupationMeasure) -> Smoothness {
    let h = occ.grid.h();
    let n = occ.grid.n_cells() as f64;
    let mut density_c2 = 0.0f64;
    let mut dens = vec![0.0; occ.grid.n_cells()];
    for row in occ.m.rows() {
        for (d, m) in dens.iter_mut().zip(row) {
            *d = m * n;
        }
        let (a, b, c) = sup_norms_with_derivatives(&dens, h);
        density_c2 = density_c2.max(a + b + c);
    }
    Smoothness {
        density_c2,
        drift_c1: occ.drift_bound,
    }
}

/// One line of a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckLine {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value >= tolerance,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{} {:<44} value={:<24e} tol={:e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// Certificate of one occupation measure as a Mather-measure candidate.
#[derive(Debug, Clone)]
pub struct MatherCertificate {
    pub delta: f64,
    pub probe: String,
    pub closedness: Vec<(String, f64)>,
    pub mather_value: f64,
    /// `mather_value + lambda_hat`, when an estimate is available.
    pub value_gap: Option<f64>,
    pub smoothness: Smoothness,
    pub checks: Vec<CheckLine>,
}

impl MatherCertificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_closedness(&self) -> f64 {
        self.closedness.iter().map(|c| c.1).fold(0.0, f64::max)
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ARTIFACT_VERSION} config={config_hash}");
        let _ = writeln!(s, "mather certificate: probe={} delta={}", self.probe, self.delta);
        let _ = writeln!(s, "mather_value = {:.12e}", self.mather_value);
        if let Some(g) = self.value_gap {
            let _ = writeln!(s, "mather_value + lambda_hat = {g:.6e}");
        }
        let _ = writeln!(s, "density C2 bound = {:.6e}", self.smoothness.density_c2);
        let _ = writeln!(s, "drift C1 bound = {:.6e}", self.smoothness.drift_c1);
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.render());
        }
        let _ = writeln!(s, "closedness residuals:");
        for (name, r) in &self.closedness {
            let _ = writeln!(s, "  {name:<24} {r:.6e}");
        }
        s
    }
}
