//! Time stepping for the Fokker-Planck equation `d_t m = nu m'' + (m alpha)'`
//! and for the discounted backward HJB equation
//! `-d_t u - nu u'' + delta u + H(x, u') = F(x, m(t))`.
//!
//! Both equations share one IMEX discretization. A small artificial viscosity
//! `eps = min(nu, h^2 / (4 dt))` is moved from the implicit Laplacian into the
//! explicit step, where it stabilizes centered transport:
//!
//! * explicit: `m' = m + dt [ (alpha m)'_c + eps m''_h ]`, a Markov step whose
//!   transition rates `eps/h^2 +- alpha/(2h)` are nonnegative as long as
//!   `|alpha| <= 2 eps / h`;
//! * implicit: `(I - dt (nu - eps) D_hh) m_new = m'`, periodic tridiagonal.
//!
//! The HJB step is the exact adjoint of this FP step, so the discrete MFG
//! system is the first-order optimality system of the discrete control
//! problem. The discount is integrated exactly over each step: with
//! `kappa = (1 - e^{-delta dt}) / delta`,
//!
//! ```text
//! u_bar = e^{-delta dt} (I - dt (nu - eps) D_hh)^{-1} u_{k+1}
//! alpha = D_p H(x, (dt / kappa) D_c u_bar)
//! u_k   = u_bar + dt eps D_hh u_bar + kappa [F(m_k) - H(x, (dt / kappa) D_c u_bar)]
//! ```
//!
//! which solves `delta u = c` exactly for constant data.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::{sup_norms_with_derivatives, GridMeasure, TorusGrid};
use crate::model::GridModel;

/// Uniform time grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepSize(format!("dt must be > 0, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::StepSize("need at least one step".into()));
        }
        Ok(Self { dt, n_steps })
    }

    /// Smallest grid covering `[0, horizon]`.
    pub fn covering(dt: f64, horizon: f64) -> Result<Self> {
        let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(dt, steps)
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn n_slices(&self) -> usize {
        self.n_steps + 1
    }
}

/// Drift `alpha(x_j)` at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField(pub Vec<f64>);

impl DriftField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self(vec![0.0; grid.n_cells()])
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self(vec![c; grid.n_cells()])
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        Self((0..grid.n_cells()).map(|j| f(grid.center(j))).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// `sup|alpha| + sup|D_c alpha|`.
    pub fn c1_norm(&self, h: f64) -> f64 {
        let (s0, s1, _) = sup_norms_with_derivatives(&self.0, h);
        s0 + s1
    }
}

/// Value function `u(x_j)` at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField(pub Vec<f64>);

impl ValueField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self(vec![0.0; grid.n_cells()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Periodic central gradient.
    pub fn gradient(&self, h: f64) -> Vec<f64> {
        central_gradient(&self.0, h)
    }

    /// `(sup|Du|, sup|D^2 u|)`.
    pub fn derivative_norms(&self, h: f64) -> (f64, f64) {
        let (_, d1, d2) = sup_norms_with_derivatives(&self.0, h);
        (d1, d2)
    }
}

pub(crate) fn central_gradient(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|j| (v[(j + 1) % n] - v[(j + n - 1) % n]) / (2.0 * h))
        .collect()
}

/// `(I - s D_hh)` with `D_hh` the periodic second difference, factorized once
/// and solved by the cyclic Thomas algorithm (Sherman-Morrison correction).
#[derive(Debug, Clone)]
pub struct PeriodicTridiag {
    n: usize,
    /// off-diagonal entry `-s/h^2`
    off: f64,
    /// forward-sweep multipliers and reciprocal pivots of the modified tridiagonal system
    cprime: Vec<f64>,
    inv_pivot: Vec<f64>,
    /// solution of the modified system against the rank-one vector
    z: Vec<f64>,
    gamma: f64,
    identity: bool,
}

impl PeriodicTridiag {
    /// Factorizes `I - coef * D_hh` on `n` cells of width `h`.
    pub fn new(n: usize, coef: f64, h: f64) -> Self {
        if coef == 0.0 {
            return Self {
                n,
                off: 0.0,
                cprime: Vec::new(),
                inv_pivot: Vec::new(),
                z: Vec::new(),
                gamma: 0.0,
                identity: true,
            };
        }
        let s = coef / (h * h);
        let diag = 1.0 + 2.0 * s;
        let off = -s;
        // corners A[0][n-1] = A[n-1][0] = off
        let gamma = -diag;
        let mut d = vec![diag; n];
        d[0] = diag - gamma;
        d[n - 1] = diag - off * off / gamma;
        let mut cprime = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = d[0];
        cprime[0] = off / pivot[0];
        for i in 1..n {
            pivot[i] = d[i] - off * cprime[i - 1];
            cprime[i] = off / pivot[i];
        }
        let mut me = Self {
            n,
            off,
            cprime,
            inv_pivot: pivot.iter().map(|p| 1.0 / p).collect(),
            z: Vec::new(),
            gamma,
            identity: false,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = off;
        me.thomas(&mut u);
        me.z = u;
        me
    }

    fn thomas(&self, x: &mut [f64]) {
        let n = self.n;
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.off * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cprime[i] * x[i + 1];
        }
    }

    /// Solves in place.
    pub fn solve(&self, x: &mut [f64]) {
        if self.identity {
            return;
        }
        let n = self.n;
        self.thomas(x);
        let beta = self.off;
        let fact = (x[0] + beta * x[n - 1] / self.gamma)
            / (1.0 + self.z[0] + beta * self.z[n - 1] / self.gamma);
        for i in 0..n {
            x[i] -= fact * self.z[i];
        }
    }
}

/// Discretization parameters shared by the FP and HJB kernels.
#[derive(Debug, Clone)]
pub struct Scheme {
    grid: TorusGrid,
    dt: f64,
    nu: f64,
    eps: f64,
    implicit: PeriodicTridiag,
}

impl Scheme {
    pub fn new(grid: TorusGrid, dt: f64, nu: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepSize(format!("dt must be > 0, got {dt}")));
        }
        if !(nu > 0.0) {
            return Err(Error::InvalidModel(format!("nu must be > 0, got {nu}")));
        }
        let h = grid.h();
        let eps = nu.min(h * h / (4.0 * dt));
        Ok(Self {
            grid,
            dt,
            nu,
            eps,
            implicit: PeriodicTridiag::new(grid.n_cells(), dt * (nu - eps), h),
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Explicit artificial viscosity.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Largest admissible `|alpha|`: `min(h / (2 dt), 2 eps / h)`.
    pub fn max_drift(&self) -> f64 {
        let h = self.grid.h();
        (h / (2.0 * self.dt)).min(2.0 * self.eps / h) * (1.0 + 1e-12)
    }

    pub(crate) fn check_cfl(&self, alpha: &[f64]) -> Result<()> {
        let bound = self.max_drift();
        if let Some((j, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.abs() <= bound))
        {
            return Err(Error::StepSize(format!(
                "|alpha| = {} at cell {j} exceeds the CFL bound {bound} (dt = {}, h = {})",
                a.abs(),
                self.dt,
                self.grid.h()
            )));
        }
        Ok(())
    }

    /// One FP step on raw slices; `out` must not alias `m`.
    pub(crate) fn fp_step_raw(&self, m: &[f64], alpha: &[f64], out: &mut [f64]) {
        let n = m.len();
        let h = self.grid.h();
        let a = self.dt / (2.0 * h);
        let b = self.dt * self.eps / (h * h);
        for i in 0..n {
            let l = if i == 0 { n - 1 } else { i - 1 };
            let r = if i + 1 == n { 0 } else { i + 1 };
            out[i] = m[i] * (1.0 - 2.0 * b)
                + m[l] * (b - a * alpha[l])
                + m[r] * (b + a * alpha[r]);
        }
        self.implicit.solve(out);
    }

    /// One backward HJB step on raw slices. Writes `u_k` into `u_out` and the
    /// optimal drift into `alpha_out`; `flat` is `F(x_j, m_k)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn hjb_step_raw(
        &self,
        model: &GridModel,
        delta: f64,
        u_next: &[f64],
        flat: &[f64],
        ubar: &mut [f64],
        u_out: &mut [f64],
        alpha_out: &mut [f64],
    ) {
        let n = u_next.len();
        let h = self.grid.h();
        let (decay, kappa) = step_weights(delta, self.dt);
        ubar.copy_from_slice(u_next);
        self.implicit.solve(ubar);
        for v in ubar.iter_mut() {
            *v *= decay;
        }
        let grad_scale = self.dt / (kappa * 2.0 * h);
        let lap = self.dt * self.eps / (h * h);
        for j in 0..n {
            let l = if j == 0 { n - 1 } else { j - 1 };
            let r = if j + 1 == n { 0 } else { j + 1 };
            let p = (ubar[r] - ubar[l]) * grad_scale;
            let aj = model.a[j];
            alpha_out[j] = aj * p;
            let ham = 0.5 * aj * p * p - model.v[j];
            u_out[j] = ubar[j] + lap * (ubar[r] - 2.0 * ubar[j] + ubar[l]) + kappa * (flat[j] - ham);
        }
    }
}

/// `(e^{-delta dt}, (1 - e^{-delta dt}) / delta)`, with the `delta -> 0` limit
/// `(1, dt)`.
pub fn step_weights(delta: f64, dt: f64) -> (f64, f64) {
    if delta == 0.0 {
        (1.0, dt)
    } else {
        let decay = (-delta * dt).exp();
        (decay, -(-delta * dt).exp_m1() / delta)
    }
}

/// One step of `d_t m = nu m'' + (m alpha)'`.
pub fn fp_step(scheme: &Scheme, m: &GridMeasure, alpha: &DriftField) -> Result<GridMeasure> {
    scheme.grid.check_same(&m.grid())?;
    if alpha.0.len() != scheme.grid.n_cells() {
        return Err(Error::GridMismatch {
            left: scheme.grid.n_cells(),
            right: alpha.0.len(),
        });
    }
    if let Some(v) = m.masses().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidMeasure(format!(
            "negative or non-finite input mass {v}"
        )));
    }
    scheme.check_cfl(&alpha.0)?;
    let mut out = vec![0.0; m.masses().len()];
    scheme.fp_step_raw(m.masses(), &alpha.0, &mut out);
    Ok(GridMeasure::from_solver(m.grid(), out))
}

/// Runs the FP equation forward from `m0` along the drift rows of `alpha`
/// (`alpha.nrows() = n_slices`, the last row is unused). Returns all slices.
pub fn fp_forward(scheme: &Scheme, m0: &GridMeasure, alpha: &Array2<f64>) -> Result<Array2<f64>> {
    let n = scheme.grid.n_cells();
    let slices = alpha.nrows();
    let mut out = Array2::zeros((slices, n));
    fp_forward_into(scheme, m0.masses(), alpha, &mut out)?;
    Ok(out)
}

pub(crate) fn fp_forward_into(
    scheme: &Scheme,
    m0: &[f64],
    alpha: &Array2<f64>,
    out: &mut Array2<f64>,
) -> Result<()> {
    let slices = alpha.nrows();
    out.row_mut(0)
        .as_slice_mut()
        .expect("contiguous")
        .copy_from_slice(m0);
    for k in 0..slices - 1 {
        let a = alpha.row(k);
        let a = a.as_slice().expect("contiguous");
        scheme.check_cfl(a)?;
        let (head, tail) = out.view_mut().split_at(ndarray::Axis(0), k + 1);
        let cur = head.row(k);
        let mut next = tail.into_shape_with_order((slices - k - 1, a.len())).expect("shape");
        let mut next = next.row_mut(0);
        scheme.fp_step_raw(
            cur.as_slice().expect("contiguous"),
            a,
            next.as_slice_mut().expect("contiguous"),
        );
    }
    Ok(())
}

/// Output of [`hjb_backward_solve`]: value and optimal drift at every slice.
#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub u: Array2<f64>,
    pub alpha: Array2<f64>,
}

impl HjbSolution {
    pub fn value_field(&self, k: usize) -> ValueField {
        ValueField(self.u.row(k).to_vec())
    }

    pub fn drift(&self, k: usize) -> DriftField {
        DriftField(self.alpha.row(k).to_vec())
    }
}

/// Backward solve of the discounted HJB equation along a given measure path
/// (`m_path.nrows() = n_slices`) from `u(T) = terminal`. The drift at the
/// final slice is zero.
pub fn hjb_backward_solve(
    model: &GridModel,
    scheme: &Scheme,
    m_path: &Array2<f64>,
    delta: f64,
    terminal: &ValueField,
) -> Result<HjbSolution> {
    let n = scheme.grid.n_cells();
    let slices = m_path.nrows();
    let mut sol = HjbSolution {
        u: Array2::zeros((slices, n)),
        alpha: Array2::zeros((slices, n)),
    };
    hjb_backward_into(model, scheme, m_path, delta, &terminal.0, &mut sol.u, &mut sol.alpha)?;
    Ok(sol)
}

pub(crate) fn hjb_backward_into(
    model: &GridModel,
    scheme: &Scheme,
    m_path: &Array2<f64>,
    delta: f64,
    terminal: &[f64],
    u: &mut Array2<f64>,
    alpha: &mut Array2<f64>,
) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidDiscount(delta));
    }
    let n = scheme.grid.n_cells();
    let slices = m_path.nrows();
    if m_path.ncols() != n || terminal.len() != n {
        return Err(Error::GridMismatch {
            left: n,
            right: m_path.ncols().min(terminal.len()),
        });
    }
    u.row_mut(slices - 1)
        .as_slice_mut()
        .expect("contiguous")
        .copy_from_slice(terminal);
    alpha.row_mut(slices - 1).fill(0.0);
    let mut ubar = vec![0.0; n];
    let mut flat = vec![0.0; n];
    let mut u_k = vec![0.0; n];
    let mut a_k = vec![0.0; n];
    for k in (0..slices - 1).rev() {
        model.flat_derivative_into(m_path.row(k).as_slice().expect("contiguous"), &mut flat);
        scheme.hjb_step_raw(
            model,
            delta,
            u.row(k + 1).as_slice().expect("contiguous"),
            &flat,
            &mut ubar,
            &mut u_k,
            &mut a_k,
        );
        scheme.check_cfl(&a_k)?;
        u.row_mut(k).as_slice_mut().expect("contiguous").copy_from_slice(&u_k);
        alpha
            .row_mut(k)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&a_k);
    }
    Ok(())
}

/// Sup norms of `Du` and `D^2 u` over a whole solution.
pub fn value_derivative_bounds(u: &Array2<f64>, h: f64) -> (f64, f64) {
    let mut d1 = 0.0f64;
    let mut d2 = 0.0f64;
    for row in u.rows() {
        let (_, a, b) = sup_norms_with_derivatives(row.as_slice().expect("contiguous"), h);
        d1 = d1.max(a);
        d2 = d2.max(b);
    }
    (d1, d2)
}
