//! Time grids, Wiener increments and path samplers.
//!
//! The linear model is sampled with exact Gaussian transitions,
//!
//! ```text
//! X_{i+1} = φ_i X_i + ε_i,   φ_i = exp(α ∫ b),   ε_i ~ N(0, v_i),
//! v_i = ∫_{t_i}^{t_{i+1}} σ(u)² exp(2α ∫_u^{t_{i+1}} b) du
//! ```
//!
//! and the perturbed model with Euler–Maruyama at left-endpoint coefficients.
//! Both draw normal number i of stream `seed` for interval i, so ε_i and the
//! Wiener increment ΔB_i = √Δt_i·z_i share the same z_i.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coeffs::{Horizon, ModelSpec};
use crate::error::{Error, Result};
use crate::quad::half_panel;
use crate::rng::{NormalStream, SeedSpec};

/// Paths are truncated once |Y| exceeds this.
pub const OVERFLOW_THRESHOLD: f64 = 1e12;
pub const DEFAULT_PANELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// Nodes k·h up to `t_max`, which must lie below T.
    Uniform { h: f64, t_max: f64 },
    /// Nodes T(1 − ρ^k), never beyond T − δ. δ defaults to 2⁻²⁰·T.
    GeometricToT {
        rho: f64,
        count: Option<usize>,
        delta: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridKind {
    Uniform { h: f64 },
    UniformUnbounded { h: f64, t_max: f64 },
    GeometricToT { horizon: f64, rho: f64 },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    pub kind: GridKind,
}

const NODE_RTOL: f64 = 1e-9;

impl TimeGrid {
    /// A grid from arbitrary nodes, e.g. read back from a file.
    pub fn from_nodes(nodes: Vec<f64>, horizon: Horizon) -> Result<TimeGrid> {
        if nodes.first() != Some(&0.0) {
            return Err(Error::InvalidParameter("grid must start at 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid nodes must increase strictly".into()));
        }
        if let Some(&last) = nodes.last() {
            if !(last < horizon.value()) {
                return Err(Error::InvalidParameter(format!(
                    "grid node {last} is not below the horizon T = {horizon}"
                )));
            }
        }
        Ok(TimeGrid {
            nodes,
            kind: GridKind::Explicit,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    #[inline]
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().expect("grid is nonempty")
    }

    /// Index of the node equal to `t` up to a relative 1e-9.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = NODE_RTOL * t.abs().max(1.0);
        let k = self.nodes.partition_point(|&x| x < t - tol);
        (k < self.nodes.len() && (self.nodes[k] - t).abs() <= tol).then_some(k)
    }
}

pub fn make_grid(spec: &GridSpec, horizon: Horizon) -> Result<TimeGrid> {
    match *spec {
        GridSpec::Uniform { h, t_max } => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
            }
            if !(t_max > 0.0 && t_max.is_finite()) {
                return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
            }
            if !(t_max < horizon.value()) {
                return Err(Error::InvalidParameter(format!(
                    "t_max = {t_max} must lie below T = {horizon}"
                )));
            }
            let ratio = t_max / h;
            let n = ratio.round();
            let exact = (ratio - n).abs() <= NODE_RTOL * ratio.max(1.0);
            let steps = if exact { n as usize } else { ratio.floor() as usize };
            if steps > 1 << 32 {
                return Err(Error::InvalidParameter(format!("grid of {steps} steps is too large")));
            }
            let mut nodes: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
            if !exact && t_max > *nodes.last().unwrap() {
                nodes.push(t_max);
            }
            let kind = match horizon {
                Horizon::Finite(_) => GridKind::Uniform { h },
                Horizon::Infinite => GridKind::UniformUnbounded { h, t_max },
            };
            Ok(TimeGrid { nodes, kind })
        }
        GridSpec::GeometricToT { rho, count, delta } => {
            let Horizon::Finite(t_end) = horizon else {
                return Err(Error::InvalidParameter("geometric-to-T grids need a finite T".into()));
            };
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
            }
            let delta = delta.unwrap_or(t_end * 2f64.powi(-20));
            if !(delta > 0.0 && delta < t_end) {
                return Err(Error::InvalidParameter(format!(
                    "delta must lie in (0, T), got {delta}"
                )));
            }
            if count == Some(0) {
                return Err(Error::InvalidParameter("count must be positive".into()));
            }
            let stop = t_end - delta;
            let ln_rho = rho.ln();
            let mut nodes = vec![0.0];
            for k in 1usize.. {
                if count.is_some_and(|c| k >= c) {
                    break;
                }
                let t = -t_end * (k as f64 * ln_rho).exp_m1();
                if t > stop + 1e-12 * t_end {
                    break;
                }
                let t = t.min(stop);
                if t <= *nodes.last().unwrap() {
                    break;
                }
                nodes.push(t);
            }
            Ok(TimeGrid {
                nodes,
                kind: GridKind::GeometricToT { horizon: t_end, rho },
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    LinearExact,
    PerturbedEm,
    Wiener,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truncation {
    /// Index of the last node carried by the path.
    pub last_index: usize,
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: Arc<TimeGrid>,
    /// Process values at the nodes; shorter than the grid only when truncated.
    pub values: Vec<f64>,
    /// ΔB_i for every interval of the grid.
    pub increments: Vec<f64>,
    pub kind: PathKind,
    pub truncation: Option<Truncation>,
}

impl Path {
    pub fn times(&self) -> &[f64] {
        &self.grid.nodes[..self.values.len()]
    }
}

pub fn wiener_increments(grid: &TimeGrid, seed: SeedSpec) -> Vec<f64> {
    let mut s = NormalStream::new(seed);
    (0..grid.intervals())
        .map(|i| grid.dt(i).sqrt() * s.next_normal())
        .collect()
}

pub fn simulate_wiener(grid: &Arc<TimeGrid>, seed: SeedSpec) -> Path {
    let increments = wiener_increments(grid, seed);
    let mut values = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    values.push(w);
    for d in &increments {
        w += d;
        values.push(w);
    }
    Path {
        grid: Arc::clone(grid),
        values,
        increments,
        kind: PathKind::Wiener,
        truncation: None,
    }
}

/// b and σ at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCoefficients {
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GridCoefficients {
    pub fn new(model: &ModelSpec, grid: &TimeGrid) -> Result<GridCoefficients> {
        let mut b = Vec::with_capacity(grid.len());
        let mut sigma = Vec::with_capacity(grid.len());
        for &t in &grid.nodes {
            let s = model.sigma_at(t)?;
            if s <= 0.0 {
                return Err(Error::Precondition(format!("sigma must be positive, sigma({t}) = {s}")));
            }
            b.push(model.b_at(t)?);
            sigma.push(s);
        }
        Ok(GridCoefficients { b, sigma })
    }
}

/// Per-interval factors of the exact linear transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransitions {
    pub grid: Arc<TimeGrid>,
    pub phi: Vec<f64>,
    pub sd: Vec<f64>,
}

impl LinearTransitions {
    /// Integrals by composite Simpson with `panels` panels per interval.
    pub fn new(model: &ModelSpec, grid: &Arc<TimeGrid>, panels: usize) -> Result<LinearTransitions> {
        if !model.is_linear() {
            return Err(Error::Precondition("exact transitions need a linear model".into()));
        }
        let alpha = model.alpha;
        let driftless = alpha == 0.0 || model.b.constant_value() == Some(0.0);
        let sigma_const = model.sigma.constant_value();
        let panels = panels.max(1);
        let n = grid.intervals();
        let mut phi = Vec::with_capacity(n);
        let mut sd = Vec::with_capacity(n);
        let mut b = vec![0.0; 2 * panels + 1];
        let mut s2 = vec![0.0; 2 * panels + 1];
        let mut bl = vec![0.0; 2 * panels + 1];
        for i in 0..n {
            let (t0, t1) = (grid.nodes[i], grid.nodes[i + 1]);
            let h = (t1 - t0) / panels as f64;
            if driftless {
                let v = match sigma_const {
                    Some(c) => c * c * (t1 - t0),
                    None => crate::quad::simpson_try(|u| model.sigma_at(u).map(|s| s * s), t0, t1, panels)?,
                };
                phi.push(1.0);
                sd.push(v.sqrt());
                continue;
            }
            for (k, (bk, sk)) in b.iter_mut().zip(s2.iter_mut()).enumerate() {
                let u = if k == 2 * panels { t1 } else { t0 + k as f64 * 0.5 * h };
                *bk = model.b_at(u)?;
                let s = model.sigma_at(u)?;
                *sk = s * s;
            }
            bl[0] = 0.0;
            for j in 0..panels {
                let (f0, fm, f1) = (b[2 * j], b[2 * j + 1], b[2 * j + 2]);
                bl[2 * j + 1] = bl[2 * j] + half_panel(h, f0, fm, f1);
                bl[2 * j + 2] = bl[2 * j] + h / 6.0 * (f0 + 4.0 * fm + f1);
            }
            let total = bl[2 * panels];
            let g = |k: usize| s2[k] * (2.0 * alpha * (total - bl[k])).exp();
            let mut v = 0.0;
            for j in 0..panels {
                v += h / 6.0 * (g(2 * j) + 4.0 * g(2 * j + 1) + g(2 * j + 2));
            }
            let p = (alpha * total).exp();
            if !(p.is_finite() && v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("transition on [{t0}, {t1}]"),
                    last_safe: t0,
                });
            }
            phi.push(p);
            sd.push(v.sqrt());
        }
        Ok(LinearTransitions {
            grid: Arc::clone(grid),
            phi,
            sd,
        })
    }

    pub fn sample(&self, seed: SeedSpec) -> Path {
        let grid = &self.grid;
        let mut s = NormalStream::new(seed);
        let mut values = Vec::with_capacity(grid.len());
        let mut increments = Vec::with_capacity(grid.intervals());
        let mut x = 0.0;
        values.push(x);
        for i in 0..grid.intervals() {
            let z = s.next_normal();
            increments.push(grid.dt(i).sqrt() * z);
            x = self.phi[i] * x + self.sd[i] * z;
            values.push(x);
        }
        Path {
            grid: Arc::clone(grid),
            values,
            increments,
            kind: PathKind::LinearExact,
            truncation: None,
        }
    }
}

pub fn simulate_linear_exact(model: &ModelSpec, grid: &Arc<TimeGrid>, seed: SeedSpec) -> Result<Path> {
    Ok(LinearTransitions::new(model, grid, DEFAULT_PANELS)?.sample(seed))
}

/// Euler–Maruyama for dY = αb(t)a(Y)dt + σ(t)dB driven by the given increments.
/// Works for the linear model too (a(x) = x).
pub fn euler_maruyama(
    model: &ModelSpec,
    grid: &Arc<TimeGrid>,
    coeffs: &GridCoefficients,
    increments: Vec<f64>,
) -> Result<Path> {
    if increments.len() != grid.intervals() {
        return Err(Error::Misaligned(format!(
            "{} increments for {} intervals",
            increments.len(),
            grid.intervals()
        )));
    }
    let alpha = model.alpha;
    let mut values = Vec::with_capacity(grid.len());
    let mut y = 0.0;
    values.push(y);
    let mut truncation = None;
    for (i, db) in increments.iter().enumerate() {
        let drift = if alpha == 0.0 {
            0.0
        } else {
            alpha * coeffs.b[i] * model.a_at(y)?
        };
        let next = y + drift * grid.dt(i) + coeffs.sigma[i] * db;
        if !(next.abs() <= OVERFLOW_THRESHOLD) {
            truncation = Some(Truncation {
                last_index: i,
                t: grid.nodes[i],
                reason: format!("|Y| exceeded {OVERFLOW_THRESHOLD:e} at t = {}", grid.nodes[i + 1]),
            });
            break;
        }
        y = next;
        values.push(y);
    }
    Ok(Path {
        grid: Arc::clone(grid),
        values,
        increments,
        kind: PathKind::PerturbedEm,
        truncation,
    })
}

pub fn simulate_perturbed_em(model: &ModelSpec, grid: &Arc<TimeGrid>, seed: SeedSpec) -> Result<Path> {
    let coeffs = GridCoefficients::new(model, grid)?;
    simulate_perturbed_em_with(model, grid, &coeffs, seed)
}

pub fn simulate_perturbed_em_with(
    model: &ModelSpec,
    grid: &Arc<TimeGrid>,
    coeffs: &GridCoefficients,
    seed: SeedSpec,
) -> Result<Path> {
    if model.perturbation.is_none() {
        return Err(Error::Precondition(
            "model has no perturbation r; use the exact linear sampler".into(),
        ));
    }
    euler_maruyama(model, grid, coeffs, wiener_increments(grid, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::registry::{lookup, Overrides};
    use crate::coeffs::CoeffFn;

    fn uniform(h: f64, t_max: f64) -> Arc<TimeGrid> {
        Arc::new(make_grid(&GridSpec::Uniform { h, t_max }, Horizon::Infinite).unwrap())
    }

    fn ou(alpha: f64) -> ModelSpec {
        lookup(
            "ou",
            &Overrides {
                alpha: Some(alpha),
                ..Overrides::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(&GridSpec::Uniform { h: 0.25, t_max: 1.0 }, Horizon::Infinite).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(
            &GridSpec::GeometricToT {
                rho: 0.5,
                count: Some(4),
                delta: None,
            },
            Horizon::Finite(1.0),
        )
        .unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.5, 0.75, 0.875]);
        assert!(make_grid(&GridSpec::Uniform { h: 0.0, t_max: 1.0 }, Horizon::Infinite).is_err());
        assert!(make_grid(&GridSpec::Uniform { h: -1.0, t_max: 1.0 }, Horizon::Infinite).is_err());
        assert!(make_grid(&GridSpec::Uniform { h: 0.1, t_max: 1.0 }, Horizon::Finite(1.0)).is_err());
        let geo = GridSpec::GeometricToT {
            rho: 0.5,
            count: None,
            delta: None,
        };
        assert!(make_grid(&geo, Horizon::Infinite).is_err());
    }

    #[test]
    fn uniform_grid_appends_ragged_end() {
        let g = make_grid(&GridSpec::Uniform { h: 0.3, t_max: 1.0 }, Horizon::Infinite).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.end(), 1.0);
        let g = make_grid(&GridSpec::Uniform { h: 0.01, t_max: 10.0 }, Horizon::Infinite).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.index_of(10.0), Some(1000));
        assert_eq!(g.index_of(5.0), Some(500));
        assert_eq!(g.index_of(5.005), None);
    }

    #[test]
    fn geometric_grid_stops_before_horizon() {
        let rho = 2f64.powf(-1.0 / 256.0);
        let g = make_grid(
            &GridSpec::GeometricToT {
                rho,
                count: None,
                delta: None,
            },
            Horizon::Finite(1.0),
        )
        .unwrap();
        assert_eq!(g.intervals(), 5120);
        assert_eq!(g.end(), 1.0 - 2f64.powi(-20));
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn wiener_is_deterministic_and_cumulative() {
        let g = uniform(0.5, 4.0);
        let seed = SeedSpec::new(5, 2);
        let a = simulate_wiener(&g, seed);
        let b = simulate_wiener(&g, seed);
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.0);
        let sum: f64 = a.increments.iter().sum();
        assert!((sum - a.values[8]).abs() < 1e-14);
        let single = Arc::new(TimeGrid::from_nodes(vec![0.0, 1.0], Horizon::Infinite).unwrap());
        let w = simulate_wiener(&single, seed);
        assert_eq!(w.values[1], w.increments[0]);
    }

    #[test]
    fn alpha_zero_unit_sigma_is_wiener() {
        let g = uniform(0.01, 2.0);
        let seed = SeedSpec::new(11, 0);
        let x = simulate_linear_exact(&ou(0.0), &g, seed).unwrap();
        let w = simulate_wiener(&g, seed);
        assert_eq!(x.values, w.values);
        let zero_b = ModelSpec::linear("zero", Horizon::Infinite, "0", "1", 1.0).unwrap();
        let y = simulate_linear_exact(&zero_b, &g, seed).unwrap();
        assert_eq!(x.values, y.values);
    }

    #[test]
    fn refinement_changes_transitions_little() {
        let m = ModelSpec::linear("m", Horizon::Infinite, "1 + 0.5*sin(3*t)", "exp(-t/4) + 0.2*t", 0.8).unwrap();
        let g = uniform(0.125, 4.0);
        let coarse = LinearTransitions::new(&m, &g, 8).unwrap();
        let fine = LinearTransitions::new(&m, &g, 32).unwrap();
        for i in 0..g.intervals() {
            assert!(((coarse.phi[i] - fine.phi[i]) / fine.phi[i]).abs() < 1e-8);
            let (vc, vf) = (coarse.sd[i].powi(2), fine.sd[i].powi(2));
            assert!(((vc - vf) / vf).abs() < 1e-8);
        }
    }

    #[test]
    fn ou_transition_closed_form() {
        let g = uniform(0.1, 1.0);
        let t = LinearTransitions::new(&ou(-1.0), &g, 8).unwrap();
        let v = (1.0 - (-0.2f64).exp()) / 2.0;
        for i in 0..g.intervals() {
            assert!((t.phi[i] - (-0.1f64).exp()).abs() < 1e-14);
            assert!((t.sd[i] * t.sd[i] - v).abs() < 1e-9 * v);
        }
    }

    #[test]
    fn em_rejects_linear_and_is_exact_for_alpha_zero() {
        let g = uniform(0.01, 1.0);
        let seed = SeedSpec::new(3, 1);
        assert!(matches!(
            simulate_perturbed_em(&ou(1.0), &g, seed),
            Err(Error::Precondition(_))
        ));
        let m = ou(0.0)
            .with_perturbation(CoeffFn::state("0.5*sin(x)").unwrap(), 0.5, 0.0, 0.5)
            .unwrap();
        let y = simulate_perturbed_em(&m, &g, seed).unwrap();
        let mut cum = 0.0;
        for (i, d) in y.increments.iter().enumerate() {
            cum += d;
            assert_eq!(y.values[i + 1], cum);
        }
    }

    #[test]
    fn em_truncates_on_overflow() {
        let m = ou(40.0)
            .with_perturbation(CoeffFn::state("0.5*sin(x)").unwrap(), 0.5, 0.0, 0.5)
            .unwrap();
        let g = uniform(0.01, 2.0);
        let y = simulate_perturbed_em(&m, &g, SeedSpec::new(1, 0)).unwrap();
        let tr = y.truncation.as_ref().expect("path must overflow");
        assert_eq!(y.values.len(), tr.last_index + 1);
        assert!(y.values.iter().all(|v| v.abs() <= OVERFLOW_THRESHOLD));
        assert_eq!(y.increments.len(), g.intervals());
    }
}
