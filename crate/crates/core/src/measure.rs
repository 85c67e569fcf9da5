//! The discretized circle, probability measures on it, and the circular
//! 1-Wasserstein distance.
//!
//! A measure is a vector of cell masses. Cell `j` is `[j h, (j + 1) h)` with
//! center `x_j = (j + 1/2) h`, and every atom is placed at a cell center, so
//! the transport problem between two measures is a transport problem between
//! point masses on the unit circle.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum m_j - 1|` enforced by every constructor.
pub const MASS_TOL: f64 = 1e-12;

/// Diameter of the space of probability measures on the unit circle under W1.
pub const W1_DIAMETER: f64 = 0.5;

/// Uniform periodic grid on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n_cells: usize,
}

impl TorusGrid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 cells, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.n_cells as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    /// Index of the cell containing `x` (taken modulo 1).
    pub fn cell_of(&self, x: f64) -> usize {
        let y = x.rem_euclid(1.0);
        ((y * self.n_cells as f64).floor() as usize).min(self.n_cells - 1)
    }

    #[inline]
    pub fn prev(&self, j: usize) -> usize {
        if j == 0 {
            self.n_cells - 1
        } else {
            j - 1
        }
    }

    #[inline]
    pub fn next(&self, j: usize) -> usize {
        if j + 1 == self.n_cells {
            0
        } else {
            j + 1
        }
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self.n_cells != other.n_cells {
            return Err(Error::GridMismatch {
                left: self.n_cells,
                right: other.n_cells,
            });
        }
        Ok(())
    }
}

/// A probability measure on the grid, stored as cell masses.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: TorusGrid,
    mass: Vec<f64>,
}

impl GridMeasure {
    /// Validates nonnegativity and unit total mass.
    pub fn from_masses(grid: TorusGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.n_cells() {
            return Err(Error::GridMismatch {
                left: grid.n_cells(),
                right: mass.len(),
            });
        }
        if let Some((j, v)) = mass
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidMeasure(format!("cell {j} has mass {v}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} differs from 1 by more than {MASS_TOL:e}"
            )));
        }
        Ok(Self { grid, mass })
    }

    /// Normalizes nonnegative weights to a probability vector.
    pub fn from_weights(grid: TorusGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMeasure(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("weights sum to zero".into()));
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Self::from_masses(grid, mass)
    }

    /// Samples a density at the cell centers and normalizes.
    pub fn from_density_fn(grid: TorusGrid, density: impl Fn(f64) -> f64) -> Result<Self> {
        let weights = (0..grid.n_cells())
            .map(|j| density(grid.center(j)))
            .collect();
        Self::from_weights(grid, weights)
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            mass: vec![1.0 / n as f64; n],
        }
    }

    /// All mass in the cell containing `x`.
    pub fn dirac(grid: TorusGrid, x: f64) -> Self {
        let mut mass = vec![0.0; grid.n_cells()];
        mass[grid.cell_of(x)] = 1.0;
        Self { grid, mass }
    }

    /// Wraps solver output that is known to satisfy the invariants up to
    /// round-off.
    pub(crate) fn from_solver(grid: TorusGrid, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.n_cells());
        Self { grid, mass }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_masses(self) -> Vec<f64> {
        self.mass
    }

    pub fn density(&self) -> Vec<f64> {
        let inv_h = self.grid.n_cells() as f64;
        self.mass.iter().map(|m| m * inv_h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Integral of a function against the measure.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(j, m)| m * f(self.grid.center(j)))
            .sum()
    }

    /// Mixture `(1 - t) self + t other`.
    pub fn lerp(&self, other: &GridMeasure, t: f64) -> Result<GridMeasure> {
        self.grid.check_same(&other.grid)?;
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Ok(GridMeasure::from_solver(self.grid, mass))
    }

    /// CSV row `name,n_cells,m_0,...,m_{n-1}`; floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_csv_row(&self, name: &str) -> String {
        let mut row = format!("{name},{}", self.grid.n_cells());
        for m in &self.mass {
            row.push(',');
            row.push_str(&m.to_string());
        }
        row
    }

    pub fn from_csv_row(row: &str) -> Result<(String, GridMeasure)> {
        let bad = |reason: String| Error::Format {
            path: "<csv row>".into(),
            reason,
        };
        let mut fields = row.trim_end().split(',');
        let name = fields
            .next()
            .ok_or_else(|| bad("empty row".into()))?
            .to_string();
        let n: usize = fields
            .next()
            .ok_or_else(|| bad("missing n_cells".into()))?
            .parse()
            .map_err(|e| bad(format!("n_cells: {e}")))?;
        let mass = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("mass `{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if mass.len() != n {
            return Err(bad(format!("expected {n} masses, found {}", mass.len())));
        }
        let grid = TorusGrid::new(n)?;
        Ok((name, GridMeasure::from_masses(grid, mass)?))
    }
}

/// Circular W1 distance.
///
/// With cumulative differences `D_j = sum_{i <= j} (a_i - b_i)`, the distance
/// is `min_t sum_j h |D_j - t|`; the minimizer is a median of the `D_j` and the
/// lower median is used.
pub fn w1_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(w1_masses(a.masses(), b.masses()))
}

/// Same as [`w1_distance`] on raw mass slices of equal length.
pub fn w1_masses(a: &[f64], b: &[f64]) -> f64 {
    W1Scratch::default().distance(a, b)
}

/// Buffers for repeated [`w1_masses`] calls.
#[derive(Debug, Clone, Default)]
pub struct W1Scratch {
    diffs: Vec<f64>,
    sorted: Vec<f64>,
}

impl W1Scratch {
    pub fn distance(&mut self, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        debug_assert_eq!(n, b.len());
        let diffs = &mut self.diffs;
        diffs.clear();
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x - y;
            diffs.push(acc);
        }
        self.sorted.clear();
        self.sorted.extend_from_slice(diffs);
        let k = (n - 1) / 2;
        let (_, median, _) = self.sorted.select_nth_unstable_by(k, |p, q| p.total_cmp(q));
        let t = *median;
        let h = 1.0 / n as f64;
        diffs.iter().map(|d| (d - t).abs()).sum::<f64>() * h
    }
}

/// Discrete C^2 norm of the density: `sup|rho| + sup|D rho| + sup|D^2 rho|`
/// with periodic central differences.
pub fn discrete_c2_norm(m: &GridMeasure) -> f64 {
    let rho = m.density();
    let (d0, d1, d2) = sup_norms_with_derivatives(&rho, m.grid().h());
    d0 + d1 + d2
}

/// `(sup|v|, sup|Dv|, sup|D^2 v|)` with periodic central stencils.
pub(crate) fn sup_norms_with_derivatives(v: &[f64], h: f64) -> (f64, f64, f64) {
    let n = v.len();
    let (mut s0, mut s1, mut s2) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..n {
        let l = v[(j + n - 1) % n];
        let r = v[(j + 1) % n];
        s0 = s0.max(v[j].abs());
        s1 = s1.max(((r - l) / (2.0 * h)).abs());
        s2 = s2.max(((r - 2.0 * v[j] + l) / (h * h)).abs());
    }
    (s0, s1, s2)
}

/// Closed-form initial densities used as probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    Uniform,
    /// `exp(kappa cos 2 pi (x - center))`
    Bump { kappa: f64, center: f64 },
    /// Equal-weight mixture of two bumps with a common concentration.
    TwoBump {
        kappa: f64,
        centers: [f64; 2],
        #[serde(default = "half")]
        weight: f64,
    },
    /// `1 + amplitude cos 2 pi x`
    Cosine { amplitude: f64 },
}

fn half() -> f64 {
    0.5
}

/// Parameters accepted by [`ProbeSpec::from_name`]; missing entries take the
/// panel defaults.
#[derive(Debug, Clone, Default)]
pub struct ProbeParams {
    pub kappa: Option<f64>,
    pub center: Option<f64>,
    pub centers: Option<[f64; 2]>,
    pub amplitude: Option<f64>,
}

impl ProbeSpec {
    pub fn from_name(name: &str, params: &ProbeParams) -> Result<Self> {
        let spec = match name {
            "uniform" => ProbeSpec::Uniform,
            "bump" => ProbeSpec::Bump {
                kappa: params.kappa.unwrap_or(4.0),
                center: params.center.unwrap_or(0.5),
            },
            "two_bump" => ProbeSpec::TwoBump {
                kappa: params.kappa.unwrap_or(4.0),
                centers: params.centers.unwrap_or([0.25, 0.75]),
                weight: 0.5,
            },
            "cosine" => ProbeSpec::Cosine {
                amplitude: params.amplitude.unwrap_or(0.5),
            },
            other => return Err(Error::UnknownProbe(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProbeSpec::Uniform => "uniform",
            ProbeSpec::Bump { .. } => "bump",
            ProbeSpec::TwoBump { .. } => "two_bump",
            ProbeSpec::Cosine { .. } => "cosine",
        }
    }

    /// Range checks: `kappa in [0, 20]`, `amplitude in [0, 0.9]`, centers in
    /// `[0, 1)`, mixture weight in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let check_kappa = |k: f64| {
            if !(0.0..=20.0).contains(&k) {
                return Err(Error::param("kappa", format!("{k} outside [0, 20]")));
            }
            Ok(())
        };
        let check_center = |c: f64| {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::param("center", format!("{c} outside [0, 1)")));
            }
            Ok(())
        };
        match *self {
            ProbeSpec::Uniform => Ok(()),
            ProbeSpec::Bump { kappa, center } => {
                check_kappa(kappa)?;
                check_center(center)
            }
            ProbeSpec::TwoBump {
                kappa,
                centers,
                weight,
            } => {
                check_kappa(kappa)?;
                check_center(centers[0])?;
                check_center(centers[1])?;
                if !(weight > 0.0 && weight < 1.0) {
                    return Err(Error::param("weight", format!("{weight} outside (0, 1)")));
                }
                Ok(())
            }
            ProbeSpec::Cosine { amplitude } => {
                if !(0.0..=0.9).contains(&amplitude) {
                    return Err(Error::param(
                        "amplitude",
                        format!("{amplitude} outside [0, 0.9] (density would not stay positive)"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Unnormalized closed-form density.
    pub fn density(&self, x: f64) -> f64 {
        let bump = |k: f64, c: f64| (k * (2.0 * PI * (x - c)).cos()).exp();
        match *self {
            ProbeSpec::Uniform => 1.0,
            ProbeSpec::Bump { kappa, center } => bump(kappa, center),
            ProbeSpec::TwoBump {
                kappa,
                centers,
                weight,
            } => weight * bump(kappa, centers[0]) + (1.0 - weight) * bump(kappa, centers[1]),
            ProbeSpec::Cosine { amplitude } => 1.0 + amplitude * (2.0 * PI * x).cos(),
        }
    }

    /// Human-readable closed form, recorded alongside emitted measures.
    pub fn formula(&self) -> String {
        match *self {
            ProbeSpec::Uniform => "1".to_string(),
            ProbeSpec::Bump { kappa, center } => {
                format!("exp({kappa} cos 2pi(x - {center})) / Z")
            }
            ProbeSpec::TwoBump {
                kappa,
                centers,
                weight,
            } => format!(
                "[{weight} exp({kappa} cos 2pi(x - {})) + {} exp({kappa} cos 2pi(x - {}))] / Z",
                centers[0],
                1.0 - weight,
                centers[1]
            ),
            ProbeSpec::Cosine { amplitude } => format!("1 + {amplitude} cos 2pi x"),
        }
    }
}

impl fmt::Display for ProbeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.formula())
    }
}

/// Evaluates a probe on the grid: density sampled at cell centers, then
/// normalized.
pub fn make_probe(grid: TorusGrid, spec: &ProbeSpec) -> Result<GridMeasure> {
    spec.validate()?;
    GridMeasure::from_density_fn(grid, |x| spec.density(x))
}

/// A named probe together with its measure on a given grid.
#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub spec: ProbeSpec,
    pub measure: GridMeasure,
}

/// The ordered list of probe measures at which values are tabulated.
#[derive(Debug, Clone)]
pub struct ProbePanel {
    probes: Vec<Probe>,
}

impl ProbePanel {
    pub fn new(grid: TorusGrid, entries: &[(String, ProbeSpec)]) -> Result<Self> {
        let mut probes = Vec::with_capacity(entries.len());
        for (name, spec) in entries {
            if probes.iter().any(|p: &Probe| &p.name == name) {
                return Err(Error::param("panel", format!("duplicate probe name `{name}`")));
            }
            probes.push(Probe {
                name: name.clone(),
                spec: spec.clone(),
                measure: make_probe(grid, spec)?,
            });
        }
        if probes.is_empty() {
            return Err(Error::param("panel", "at least one probe is required"));
        }
        Ok(Self { probes })
    }

    /// uniform, bump (kappa 4 at 0.5), two-bump (kappa 4 at 0.25/0.75) and
    /// cosine (amplitude 0.5).
    pub fn default_entries() -> Vec<(String, ProbeSpec)> {
        vec![
            ("uniform".into(), ProbeSpec::Uniform),
            (
                "bump".into(),
                ProbeSpec::Bump {
                    kappa: 4.0,
                    center: 0.5,
                },
            ),
            (
                "two_bump".into(),
                ProbeSpec::TwoBump {
                    kappa: 4.0,
                    centers: [0.25, 0.75],
                    weight: 0.5,
                },
            ),
            ("cosine".into(), ProbeSpec::Cosine { amplitude: 0.5 }),
        ]
    }

    pub fn default_panel(grid: TorusGrid) -> Result<Self> {
        Self::new(grid, &Self::default_entries())
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Probe> {
        self.probes.iter().find(|p| p.name == name)
    }

    pub fn measures(&self) -> Vec<GridMeasure> {
        self.probes.iter().map(|p| p.measure.clone()).collect()
    }
}
