//! Hamiltonians, the potential coupling and cylindrical test functionals.
//!
//! The model zoo is restricted to Hamiltonians `H(x, p) = a(x) p^2 / 2 - V(x)`
//! whose conjugate `H*(x, q) = q^2 / (2 a(x)) + V(x)` is available in closed
//! form. The coupling is
//!
//! ```text
//! F(m) = int f dm + theta/2 int (rho * m)^2 dx + offset
//! ```
//!
//! with trigonometric-polynomial `f` and kernel `rho`, evaluated exactly in
//! Fourier space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{GridMeasure, TorusGrid};

const TWO_PI: f64 = 2.0 * PI;

/// Trigonometric polynomial `sum_k c_k cos 2 pi k x + s_k sin 2 pi k x`,
/// serialized as a list of `[k, c_k, s_k]` triples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPoly {
    terms: Vec<(u32, f64, f64)>,
}

impl TrigPoly {
    pub fn new(terms: Vec<(u32, f64, f64)>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(0, c, 0.0)],
        }
    }

    pub fn cos(k: u32) -> Self {
        Self {
            terms: vec![(k, 1.0, 0.0)],
        }
    }

    pub fn sin(k: u32) -> Self {
        Self {
            terms: vec![(k, 0.0, 1.0)],
        }
    }

    pub fn terms(&self) -> &[(u32, f64, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|&(_, c, s)| c == 0.0 && s == 0.0)
    }

    pub fn max_freq(&self) -> u32 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, c, s)| {
                let w = TWO_PI * k as f64 * x;
                c * w.cos() + s * w.sin()
            })
            .sum()
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, c, s)| {
                let om = TWO_PI * k as f64;
                let w = om * x;
                om * (-c * w.sin() + s * w.cos())
            })
            .sum()
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, c, s)| {
                let om = TWO_PI * k as f64;
                let w = om * x;
                -om * om * (c * w.cos() + s * w.sin())
            })
            .sum()
    }

    /// `sum |c_k| + |s_k|`, an upper bound on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|&(_, c, s)| c.abs() + s.abs()).sum()
    }

    /// Guaranteed lower bound `c_0 - sum_{k >= 1} (|c_k| + |s_k|)`.
    pub fn lower_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|&(k, c, s)| if k == 0 { c } else { -(c.abs() + s.abs()) })
            .sum()
    }

    /// Complex Fourier coefficient `int p(x) e^{-2 pi i k x} dx` for `k >= 0`,
    /// as `(re, im)`.
    pub fn fourier(&self, k: u32) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for &(kk, c, s) in &self.terms {
            if kk != k {
                continue;
            }
            if k == 0 {
                re += c;
            } else {
                re += 0.5 * c;
                im -= 0.5 * s;
            }
        }
        (re, im)
    }

    pub fn on_grid(&self, grid: TorusGrid) -> Vec<f64> {
        (0..grid.n_cells()).map(|j| self.eval(grid.center(j))).collect()
    }
}

/// Shape of the Hamiltonian in `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianKind {
    /// `|p|^2 / 2 - V(x)`
    Quadratic,
    /// `a(x) p^2 / 2 - V(x)` with `a >= a_min > 0`.
    AnisotropicQuadratic { a: TrigPoly, a_min: f64 },
}

/// Coupling `int f dm + theta/2 int (rho * m)^2 dx + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    #[serde(default = "default_f")]
    pub f: TrigPoly,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_kernel")]
    pub kernel: TrigPoly,
    /// Constant added to the coupling; it never reaches the flat derivative.
    #[serde(default)]
    pub offset: f64,
}

fn default_f() -> TrigPoly {
    TrigPoly::cos(1)
}

fn default_theta() -> f64 {
    1.0
}

/// `1 + cos 2 pi x`, normalized so that `rho_hat(0) = 1`.
fn default_kernel() -> TrigPoly {
    TrigPoly::new(vec![(0, 1.0, 0.0), (1, 1.0, 0.0)])
}

impl Default for Coupling {
    fn default() -> Self {
        Self {
            f: default_f(),
            theta: default_theta(),
            kernel: default_kernel(),
            offset: 0.0,
        }
    }
}

fn default_nu() -> f64 {
    1.0
}

fn default_hamiltonian() -> HamiltonianKind {
    HamiltonianKind::Quadratic
}

/// Full model description as read from the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hamiltonian")]
    pub hamiltonian: HamiltonianKind,
    #[serde(default)]
    pub potential: TrigPoly,
    #[serde(default)]
    pub coupling: Coupling,
    /// Diffusion coefficient in front of the Laplacian.
    #[serde(default = "default_nu")]
    pub nu: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hamiltonian: HamiltonianKind::Quadratic,
            potential: TrigPoly::zero(),
            coupling: Coupling::default(),
            nu: 1.0,
        }
    }
}

impl ModelSpec {
    /// `V = 0`, `F = 0`: every admissible path has nonnegative cost.
    pub fn zero_cost() -> Self {
        Self {
            coupling: Coupling {
                f: TrigPoly::zero(),
                theta: 0.0,
                kernel: default_kernel(),
                offset: 0.0,
            },
            ..Self::default()
        }
    }

    /// `V = 0`, `F = c`.
    pub fn constant_coupling(c: f64) -> Self {
        let mut m = Self::zero_cost();
        m.coupling.offset = c;
        m
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.coupling.offset += c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidModel(format!("nu must be > 0, got {}", self.nu)));
        }
        if !(self.coupling.theta >= 0.0 && self.coupling.theta.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "theta must be >= 0, got {}",
                self.coupling.theta
            )));
        }
        if let HamiltonianKind::AnisotropicQuadratic { a, a_min } = &self.hamiltonian {
            if !(*a_min > 0.0) {
                return Err(Error::InvalidModel(format!("a_min must be > 0, got {a_min}")));
            }
            let lb = a.lower_bound();
            if lb < *a_min {
                return Err(Error::InvalidModel(format!(
                    "a(x) is only guaranteed >= {lb}, below a_min = {a_min}"
                )));
            }
        }
        Ok(())
    }

    /// Coefficient `a(x)` of `p^2 / 2`.
    #[inline]
    pub fn p_coefficient(&self, x: f64) -> f64 {
        match &self.hamiltonian {
            HamiltonianKind::Quadratic => 1.0,
            HamiltonianKind::AnisotropicQuadratic { a, .. } => a.eval(x),
        }
    }

    /// Upper bound on `1 / a(x)`.
    pub fn inv_p_coefficient_bound(&self) -> f64 {
        match &self.hamiltonian {
            HamiltonianKind::Quadratic => 1.0,
            HamiltonianKind::AnisotropicQuadratic { a, a_min } => 1.0 / a.lower_bound().max(*a_min),
        }
    }

    /// SHA-256 of the canonical JSON form, used to tag emitted artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Bound on `|running cost|` for drifts with `|alpha| <= drift_bound`.
    ///
    /// The constant `offset` is left out: the stationary tail closure
    /// integrates constants exactly, so they carry no truncation error.
    pub fn running_cost_bound(&self, drift_bound: f64) -> f64 {
        let c = &self.coupling;
        self.potential.sup_bound()
            + 0.5 * drift_bound * drift_bound * self.inv_p_coefficient_bound()
            + c.f.sup_bound()
            + 0.5 * c.theta * c.kernel.sup_bound().powi(2)
    }
}

/// `H(x, p)`.
pub fn hamiltonian(model: &ModelSpec, x: f64, p: f64) -> f64 {
    0.5 * model.p_coefficient(x) * p * p - model.potential.eval(x)
}

/// `D_p H(x, p)`.
pub fn dp_hamiltonian(model: &ModelSpec, x: f64, p: f64) -> f64 {
    model.p_coefficient(x) * p
}

/// `H*(x, q) = sup_p (p q - H(x, p))`, in closed form.
pub fn legendre_conjugate(model: &ModelSpec, x: f64, q: f64) -> f64 {
    0.5 * q * q / model.p_coefficient(x) + model.potential.eval(x)
}

/// `F(m)`, exact in Fourier space for the atomic measure carried by the grid.
pub fn coupling_value(model: &ModelSpec, m: &GridMeasure) -> f64 {
    GridModel::new(model, m.grid()).coupling_value(m.masses())
}

/// Flat derivative `F(x_j, m)`, normalized so that `sum_j F_j m_j = 0`.
pub fn flat_derivative(model: &ModelSpec, m: &GridMeasure) -> Vec<f64> {
    let gm = GridModel::new(model, m.grid());
    let mut out = vec![0.0; m.grid().n_cells()];
    gm.flat_derivative_into(m.masses(), &mut out);
    out
}

/// A model sampled on a grid, with the tables needed in the inner loops.
#[derive(Debug, Clone)]
pub struct GridModel {
    spec: ModelSpec,
    grid: TorusGrid,
    /// `a(x_j)`
    pub(crate) a: Vec<f64>,
    /// `1 / a(x_j)`
    pub(crate) inv_a: Vec<f64>,
    /// `V(x_j)`
    pub(crate) v: Vec<f64>,
    /// `f(x_j)`
    f: Vec<f64>,
    /// `(k, |rho_hat_k|^2, cos 2 pi k x_j, sin 2 pi k x_j)` for `k >= 1`.
    modes: Vec<(f64, Vec<f64>, Vec<f64>)>,
    rho0_sq: f64,
}

impl GridModel {
    pub fn new(spec: &ModelSpec, grid: TorusGrid) -> Self {
        let xs = grid.centers();
        let a: Vec<f64> = xs.iter().map(|&x| spec.p_coefficient(x)).collect();
        let inv_a = a.iter().map(|v| 1.0 / v).collect();
        let kernel = &spec.coupling.kernel;
        let (r0, i0) = kernel.fourier(0);
        let mut modes = Vec::new();
        for k in 1..=kernel.max_freq() {
            let (re, im) = kernel.fourier(k);
            let power = re * re + im * im;
            if power == 0.0 {
                continue;
            }
            let w = TWO_PI * k as f64;
            modes.push((
                power,
                xs.iter().map(|x| (w * x).cos()).collect(),
                xs.iter().map(|x| (w * x).sin()).collect(),
            ));
        }
        Self {
            spec: spec.clone(),
            grid,
            a,
            inv_a,
            v: spec.potential.on_grid(grid),
            f: spec.coupling.f.on_grid(grid),
            modes,
            rho0_sq: r0 * r0 + i0 * i0,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn nu(&self) -> f64 {
        self.spec.nu
    }

    /// `(|rho_hat_k|^2, sum_j m_j cos 2 pi k x_j, sum_j m_j sin 2 pi k x_j)`
    /// for every retained kernel mode.
    fn mode_sums(&self, m: &[f64]) -> Vec<(f64, f64, f64)> {
        self.modes
            .iter()
            .map(|(power, c, s)| {
                let mut cs = 0.0;
                let mut ss = 0.0;
                for j in 0..m.len() {
                    cs += m[j] * c[j];
                    ss += m[j] * s[j];
                }
                (*power, cs, ss)
            })
            .collect()
    }

    pub fn coupling_value(&self, m: &[f64]) -> f64 {
        let c = &self.spec.coupling;
        let linear: f64 = m.iter().zip(&self.f).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        if c.theta != 0.0 {
            let total: f64 = m.iter().sum();
            // |m_hat_0|^2 |rho_hat_0|^2 + 2 sum_{k>=1} |rho_hat_k|^2 |m_hat_k|^2
            quad = self.rho0_sq * total * total;
            for (power, cs, ss) in self.mode_sums(m) {
                quad += 2.0 * power * (cs * cs + ss * ss);
            }
        }
        linear + 0.5 * c.theta * quad + c.offset
    }

    /// Writes the normalized flat derivative into `out`.
    pub fn flat_derivative_into(&self, m: &[f64], out: &mut [f64]) {
        let theta = self.spec.coupling.theta;
        out.copy_from_slice(&self.f);
        if theta != 0.0 {
            let total: f64 = m.iter().sum();
            let base = theta * self.rho0_sq * total;
            for o in out.iter_mut() {
                *o += base;
            }
            for ((power, cs, ss), (_, c, s)) in self.mode_sums(m).into_iter().zip(&self.modes) {
                let w = 2.0 * theta * power;
                for j in 0..out.len() {
                    out[j] += w * (cs * c[j] + ss * s[j]);
                }
            }
        }
        let mean: f64 = out.iter().zip(m).map(|(a, b)| a * b).sum();
        for o in out.iter_mut() {
            *o -= mean;
        }
    }

    /// `sum_j H*(x_j, alpha_j) m_j`.
    #[inline]
    pub fn kinetic_cost(&self, m: &[f64], alpha: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..m.len() {
            acc += m[j] * (0.5 * alpha[j] * alpha[j] * self.inv_a[j] + self.v[j]);
        }
        acc
    }

    /// Running cost `sum_j H*(x_j, alpha_j) m_j + F(m)`.
    pub fn running_cost(&self, m: &[f64], alpha: &[f64]) -> f64 {
        self.kinetic_cost(m, alpha) + self.coupling_value(m)
    }
}

/// Outer map of a cylindrical functional.
#[derive(Debug, Clone, PartialEq)]
pub enum Outer {
    /// `sum_i c_i z_i`
    Linear(Vec<f64>),
    /// `z_i^2`
    Square(usize),
    /// `z_i z_j`
    Product(usize, usize),
}

/// Cylindrical functional `Phi(m) = phi(int psi_1 dm, ..., int psi_k dm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctional {
    pub name: String,
    pub observables: Vec<TrigPoly>,
    pub outer: Outer,
}

impl TestFunctional {
    pub fn linear(name: impl Into<String>, psi: TrigPoly) -> Self {
        Self {
            name: name.into(),
            observables: vec![psi],
            outer: Outer::Linear(vec![1.0]),
        }
    }

    pub fn square(name: impl Into<String>, psi: TrigPoly) -> Self {
        Self {
            name: name.into(),
            observables: vec![psi],
            outer: Outer::Square(0),
        }
    }

    pub fn product(name: impl Into<String>, a: TrigPoly, b: TrigPoly) -> Self {
        Self {
            name: name.into(),
            observables: vec![a, b],
            outer: Outer::Product(0, 1),
        }
    }

    /// The constant functional `Phi = 1`.
    pub fn one() -> Self {
        Self::linear("one", TrigPoly::constant(1.0))
    }

    pub fn inner_values(&self, m: &GridMeasure) -> Vec<f64> {
        self.observables
            .iter()
            .map(|psi| m.integrate(|x| psi.eval(x)))
            .collect()
    }

    pub fn outer_value(&self, z: &[f64]) -> f64 {
        match &self.outer {
            Outer::Linear(c) => c.iter().zip(z).map(|(a, b)| a * b).sum(),
            Outer::Square(i) => z[*i] * z[*i],
            Outer::Product(i, j) => z[*i] * z[*j],
        }
    }

    /// Gradient of the outer map.
    pub fn outer_grad(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.outer_grad_into(z, &mut g);
        g
    }

    /// [`Self::outer_grad`] into a buffer of length `z.len()`.
    pub fn outer_grad_into(&self, z: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        match &self.outer {
            Outer::Linear(c) => g.copy_from_slice(c),
            Outer::Square(i) => g[*i] = 2.0 * z[*i],
            Outer::Product(i, j) => {
                g[*i] += z[*j];
                g[*j] += z[*i];
            }
        }
    }

    fn combine(&self, m: &GridMeasure, eval: impl Fn(&TrigPoly, f64) -> f64) -> Vec<f64> {
        let grad = self.outer_grad(&self.inner_values(m));
        let grid = m.grid();
        (0..grid.n_cells())
            .map(|j| {
                let x = grid.center(j);
                self.observables
                    .iter()
                    .zip(&grad)
                    .map(|(psi, g)| g * eval(psi, x))
                    .sum()
            })
            .collect()
    }

    /// Unnormalized flat derivative `sum_i d_i phi psi_i(x_j)`.
    pub fn flat_derivative(&self, m: &GridMeasure) -> Vec<f64> {
        self.combine(m, |psi, x| psi.eval(x))
    }
}

/// `Phi(m)`.
pub fn eval_functional(phi: &TestFunctional, m: &GridMeasure) -> f64 {
    phi.outer_value(&phi.inner_values(m))
}

/// `D_m Phi(m, x_j) = sum_i d_i phi psi_i'(x_j)`.
pub fn eval_dm(phi: &TestFunctional, m: &GridMeasure) -> Vec<f64> {
    phi.combine(m, |psi, x| psi.deriv(x))
}

/// `div_y D_m Phi(m, x_j) = sum_i d_i phi psi_i''(x_j)`.
pub fn eval_div_dm(phi: &TestFunctional, m: &GridMeasure) -> Vec<f64> {
    phi.combine(m, |psi, x| psi.deriv2(x))
}

/// The closedness battery: `psi in {sin, cos}(2 pi k x)` for `k <= 4`, with
/// identity, square and pairwise-product outer maps (8 + 8 + 28 = 44).
pub fn functional_battery() -> Vec<TestFunctional> {
    let mut obs = Vec::new();
    for k in 1..=4u32 {
        obs.push((format!("sin{k}"), TrigPoly::sin(k)));
        obs.push((format!("cos{k}"), TrigPoly::cos(k)));
    }
    let mut out = Vec::with_capacity(44);
    for (name, psi) in &obs {
        out.push(TestFunctional::linear(format!("id[{name}]"), psi.clone()));
    }
    for (name, psi) in &obs {
        out.push(TestFunctional::square(format!("sq[{name}]"), psi.clone()));
    }
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            out.push(TestFunctional::product(
                format!("prod[{},{}]", obs[i].0, obs[j].0),
                obs[i].1.clone(),
                obs[j].1.clone(),
            ));
        }
    }
    out
}
