//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use mfg_weakkam::model::ModelSpec;
use rand::Rng;

const TWO_PI: f64 = 2.0 * PI;

/// Random probability vector on `n` cells with some empty cells.
pub fn random_masses(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[rng.gen_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Optimal transport cost between two mass vectors on the discrete circle
/// `{(j + 1/2) / n}`, by successive shortest paths on the full bipartite
/// transport network.
pub fn lp_w1(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let h = 1.0 / n as f64;
    // nodes: 0 = source, 1..=n supply, n+1..=2n demand, 2n+1 = sink
    let nodes = 2 * n + 2;
    let (s, t) = (0, 2 * n + 1);
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
        rev: usize,
    }
    let mut g: Vec<Vec<Edge>> = (0..nodes).map(|_| Vec::new()).collect();
    let add = |g: &mut Vec<Vec<Edge>>, u: usize, v: usize, cap: f64, cost: f64| {
        let ru = g[v].len();
        let rv = g[u].len();
        g[u].push(Edge { to: v, cap, cost, rev: ru });
        g[v].push(Edge { to: u, cap: 0.0, cost: -cost, rev: rv });
    };
    for i in 0..n {
        add(&mut g, s, 1 + i, a[i], 0.0);
        add(&mut g, n + 1 + i, t, b[i], 0.0);
        for j in 0..n {
            let d = (i as f64 - j as f64).abs();
            let d = d.min(n as f64 - d) * h;
            add(&mut g, 1 + i, n + 1 + j, f64::INFINITY, d);
        }
    }
    let mut remaining: f64 = a.iter().sum();
    let mut total = 0.0;
    let eps = 1e-15;
    while remaining > eps {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[s] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for (k, e) in g[u].iter().enumerate() {
                    if e.cap > eps && dist[u] + e.cost < dist[e.to] - 1e-15 {
                        dist[e.to] = dist[u] + e.cost;
                        prev[e.to] = Some((u, k));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t] == f64::INFINITY {
            break;
        }
        let mut push = remaining;
        let mut v = t;
        while let Some((u, k)) = prev[v] {
            push = push.min(g[u][k].cap);
            v = u;
        }
        let mut v = t;
        while let Some((u, k)) = prev[v] {
            g[u][k].cap -= push;
            let r = g[u][k].rev;
            g[v][r].cap += push;
            v = u;
        }
        total += push * dist[t];
        remaining -= push;
    }
    total
}

fn trig_eval(terms: &[(u32, f64, f64)], x: f64) -> f64 {
    terms
        .iter()
        .map(|&(k, c, s)| {
            let w = TWO_PI * k as f64 * x;
            c * w.cos() + s * w.sin()
        })
        .sum()
}

/// `R(z) = int rho(y) rho(y + z) dy` by trapezoidal quadrature, exact for
/// trigonometric polynomials of low degree.
pub fn autocorrelation(spec: &ModelSpec, z: f64) -> f64 {
    let k = spec.coupling.kernel.terms();
    let q = 1024;
    (0..q)
        .map(|i| {
            let y = i as f64 / q as f64;
            trig_eval(k, y) * trig_eval(k, y + z)
        })
        .sum::<f64>()
        / q as f64
}

/// Coupling evaluated in real space on cell centers.
pub struct RealSpaceCoupling {
    f: Vec<f64>,
    r: Vec<Vec<f64>>,
    theta: f64,
    offset: f64,
}

impl RealSpaceCoupling {
    pub fn new(spec: &ModelSpec, n: usize) -> Self {
        let xs: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect();
        let f = xs.iter().map(|&x| trig_eval(spec.coupling.f.terms(), x)).collect();
        let r = xs
            .iter()
            .map(|&x| xs.iter().map(|&y| autocorrelation(spec, x - y)).collect())
            .collect();
        Self {
            f,
            r,
            theta: spec.coupling.theta,
            offset: spec.coupling.offset,
        }
    }

    pub fn value(&self, m: &[f64]) -> f64 {
        let lin: f64 = m.iter().zip(&self.f).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for i in 0..m.len() {
            for l in 0..m.len() {
                quad += m[i] * m[l] * self.r[i][l];
            }
        }
        lin + 0.5 * self.theta * quad + self.offset
    }

    /// Unnormalized gradient in the masses.
    pub fn gradient(&self, m: &[f64]) -> Vec<f64> {
        (0..m.len())
            .map(|i| {
                self.f[i] + self.theta * (0..m.len()).map(|l| self.r[i][l] * m[l]).sum::<f64>()
            })
            .collect()
    }
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = a[i][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[c][j];
                        inv[i][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    inv
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn matvec_t(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = a.len();
    (0..n).map(|j| (0..n).map(|i| a[i][j] * x[i]).sum()).collect()
}

/// The Fokker-Planck step as dense matrices: explicit part with centered
/// transport and diffusion `eps = min(nu, h^2 / (4 dt))`, followed by an
/// implicit solve with the remaining diffusion.
pub struct DenseFp {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub eps: f64,
    linv: Vec<Vec<f64>>,
}

impl DenseFp {
    pub fn new(n: usize, dt: f64, nu: f64) -> Self {
        let h = 1.0 / n as f64;
        let eps = nu.min(h * h / (4.0 * dt));
        let s = dt * (nu - eps) / (h * h);
        let l: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] += 1.0 + 2.0 * s;
                row[(i + n - 1) % n] -= s;
                row[(i + 1) % n] -= s;
                row
            })
            .collect();
        Self {
            n,
            h,
            dt,
            eps,
            linv: invert(l),
        }
    }

    pub fn max_drift(&self) -> f64 {
        (self.h / (2.0 * self.dt)).min(2.0 * self.eps / self.h)
    }

    fn explicit(&self, alpha: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n;
        let a = self.dt / (2.0 * self.h);
        let b = self.dt * self.eps / (self.h * self.h);
        (0..n)
            .map(|i| {
                let l = (i + n - 1) % n;
                let r = (i + 1) % n;
                let mut row = vec![0.0; n];
                row[i] += 1.0 - 2.0 * b;
                row[l] += b - a * alpha[l];
                row[r] += b + a * alpha[r];
                row
            })
            .collect()
    }

    pub fn step(&self, m: &[f64], alpha: &[f64]) -> Vec<f64> {
        matvec(&self.linv, &matvec(&self.explicit(alpha), m))
    }

    /// `L^{-T} p` followed by the transpose of the explicit part.
    fn adjoint(&self, alpha: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = matvec_t(&self.linv, p);
        (matvec_t(&self.explicit(alpha), &q), q)
    }
}

/// Discount weights of the shared left-endpoint rule with the stationary tail.
pub fn weights(delta: f64, dt: f64, k: usize) -> Vec<f64> {
    let kappa = (1.0 - (-delta * dt).exp()) / delta;
    let mut w: Vec<f64> = (0..k).map(|i| (-delta * i as f64 * dt).exp() * kappa).collect();
    w.push((-delta * k as f64 * dt).exp() / delta);
    w
}

pub struct Transcription<'a> {
    pub spec: &'a ModelSpec,
    pub fp: DenseFp,
    pub coupling: RealSpaceCoupling,
    pub w: Vec<f64>,
    pub m0: Vec<f64>,
    inv_a: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Transcription<'a> {
    pub fn new(spec: &'a ModelSpec, m0: &[f64], delta: f64, dt: f64, n_steps: usize) -> Self {
        let n = m0.len();
        let xs: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect();
        Self {
            spec,
            fp: DenseFp::new(n, dt, spec.nu),
            coupling: RealSpaceCoupling::new(spec, n),
            w: weights(delta, dt, n_steps),
            m0: m0.to_vec(),
            inv_a: xs.iter().map(|&x| 1.0 / spec.p_coefficient(x)).collect(),
            v: xs.iter().map(|&x| trig_eval(spec.potential.terms(), x)).collect(),
        }
    }

    fn path(&self, alpha: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut m = vec![self.m0.clone()];
        for a in alpha {
            let next = self.fp.step(m.last().unwrap(), a);
            m.push(next);
        }
        m
    }

    fn running(&self, m: &[f64], a: Option<&[f64]>) -> f64 {
        let mut c = self.coupling.value(m);
        for j in 0..m.len() {
            let q = a.map_or(0.0, |a| a[j]);
            c += m[j] * (0.5 * q * q * self.inv_a[j] + self.v[j]);
        }
        c
    }

    pub fn cost(&self, alpha: &[Vec<f64>]) -> f64 {
        let m = self.path(alpha);
        let k = alpha.len();
        let mut j: f64 = (0..k).map(|i| self.w[i] * self.running(&m[i], Some(&alpha[i]))).sum();
        j += self.w[k] * self.running(&m[k], None);
        j
    }

    /// Cost and its gradient in `alpha` by reverse-mode sweep.
    pub fn cost_grad(&self, alpha: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let m = self.path(alpha);
        let k = alpha.len();
        let n = self.m0.len();
        let c = self.fp.dt / (2.0 * self.fp.h);
        let mut p: Vec<f64> = {
            let g = self.coupling.gradient(&m[k]);
            (0..n).map(|j| self.w[k] * (g[j] + self.v[j])).collect()
        };
        let mut grad = vec![vec![0.0; n]; k];
        let mut cost = self.w[k] * self.running(&m[k], None);
        for i in (0..k).rev() {
            let a = &alpha[i];
            cost += self.w[i] * self.running(&m[i], Some(a));
            let (back, q) = self.fp.adjoint(a, &p);
            let g = self.coupling.gradient(&m[i]);
            for j in 0..n {
                let l = (j + n - 1) % n;
                let r = (j + 1) % n;
                grad[i][j] = self.w[i] * m[i][j] * a[j] * self.inv_a[j] + m[i][j] * c * (q[l] - q[r]);
            }
            p = (0..n)
                .map(|j| {
                    self.w[i] * (g[j] + 0.5 * a[j] * a[j] * self.inv_a[j] + self.v[j]) + back[j]
                })
                .collect();
        }
        (cost, grad)
    }

    /// Minimizes the cost over drift paths in the transport box with a
    /// diagonally preconditioned projected gradient method and Armijo
    /// backtracking. Stops when a full sweep lowers the cost by less than
    /// `rtol` relative.
    pub fn minimize(&self, rtol: f64, max_iter: usize) -> (f64, usize) {
        let k = self.w.len() - 1;
        let n = self.m0.len();
        let bound = self.fp.max_drift();
        let mut alpha = vec![vec![0.0; n]; k];
        let (mut cost, mut grad) = self.cost_grad(&alpha);
        let mut quiet = 0;
        for it in 0..max_iter {
            let m = self.path(&alpha);
            let dir: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    (0..n)
                        .map(|j| -grad[i][j] / (self.w[i] * m[i][j] * self.inv_a[j]).max(1e-300))
                        .collect()
                })
                .collect();
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let trial: Vec<Vec<f64>> = (0..k)
                    .map(|i| {
                        (0..n)
                            .map(|j| (alpha[i][j] + step * dir[i][j]).clamp(-bound, bound))
                            .collect()
                    })
                    .collect();
                let slope: f64 = (0..k)
                    .map(|i| (0..n).map(|j| grad[i][j] * (trial[i][j] - alpha[i][j])).sum::<f64>())
                    .sum();
                let c = self.cost(&trial);
                if c <= cost + 1e-4 * slope {
                    accepted = Some((trial, c));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, c)) = accepted else {
                return (cost, it);
            };
            let gain = cost - c;
            alpha = trial;
            let (c2, g2) = self.cost_grad(&alpha);
            cost = c2;
            grad = g2;
            if gain <= rtol * cost.abs() {
                quiet += 1;
                if quiet >= 3 {
                    return (cost, it + 1);
                }
            } else {
                quiet = 0;
            }
        }
        (cost, max_iter)
    }
}

/// Exact cell masses at time `t` of `d_t m = nu m'' + c m'` started from the
/// density `1 + sum_k (a_k cos 2 pi k x + b_k sin 2 pi k x)`.
pub fn advection_diffusion_masses(modes: &[(u32, f64, f64)], nu: f64, c: f64, t: f64, n: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    (0..n)
        .map(|j| {
            let x = (j as f64 + 0.5) * h;
            let mut v = h;
            for &(k, a, b) in modes {
                let om = TWO_PI * k as f64;
                let sinc = (om * h / 2.0).sin() / (om * h / 2.0);
                let decay = (-nu * om * om * t).exp();
                // (a - i b) e^{i om (x + c t)}
                let ph = om * (x + c * t);
                v += h * sinc * decay * (a * ph.cos() + b * ph.sin());
            }
            v
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `log2(e_coarse / e_fine)` for consecutive entries.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
