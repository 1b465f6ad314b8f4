//! The generalized Grönwall bound and the martingale strong-law diagnostic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulate::{GridCoefficients, Path};

/// Samples of φ, ψ₁, ψ₁′ and ψ₂ on a grid s₀ ≤ … ≤ s₁, for the hypothesis
/// φ(s) ≤ ψ₁(s) + ∫_{s₀}^s ψ₂φ.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallInstance {
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi1: Vec<f64>,
    pub dpsi1: Vec<f64>,
    pub psi2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    /// ψ₁(s₀)e^{∫ψ₂} + ∫ψ₁′(u)e^{∫_u^s ψ₂}du at each node.
    pub bound: Vec<f64>,
    /// Nodes where the hypothesis fails beyond the tolerance.
    pub hypothesis_violations: Vec<usize>,
    /// Nodes where the hypothesis holds but φ exceeds the bound.
    pub bound_violations: Vec<usize>,
    pub tolerance: f64,
}

impl GronwallReport {
    pub fn hypothesis_holds(&self) -> bool {
        self.hypothesis_violations.is_empty()
    }

    pub fn dominated(&self) -> bool {
        self.bound_violations.is_empty()
    }
}

pub const GRONWALL_RTOL: f64 = 1e-8;

fn cumulative_trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..grid.len() {
        acc += 0.5 * (grid[k] - grid[k - 1]) * (f(k - 1) + f(k));
        out.push(acc);
    }
    out
}

pub fn gronwall_bound(inst: &GronwallInstance) -> Result<GronwallReport> {
    gronwall_bound_with_tolerance(inst, GRONWALL_RTOL)
}

/// Evaluates the bound by trapezoid quadrature and checks it against φ. The
/// tolerance is `rtol` times the largest |bound|.
pub fn gronwall_bound_with_tolerance(inst: &GronwallInstance, rtol: f64) -> Result<GronwallReport> {
    let n = inst.grid.len();
    if n < 2 {
        return Err(Error::InvalidParameter("the grid needs at least 2 nodes".into()));
    }
    if [&inst.phi, &inst.psi1, &inst.dpsi1, &inst.psi2]
        .iter()
        .any(|v| v.len() != n)
    {
        return Err(Error::InvalidParameter("sample lengths differ from the grid".into()));
    }
    if inst.grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("grid must be nondecreasing".into()));
    }
    if inst.phi.iter().chain(&inst.psi2).any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidParameter("phi and psi2 must be nonnegative".into()));
    }
    let g = &inst.grid;
    let e = cumulative_trapezoid(g, |k| inst.psi2[k]);
    let inner = cumulative_trapezoid(g, |k| inst.dpsi1[k] * (-e[k]).exp());
    let bound: Vec<f64> = (0..n).map(|k| e[k].exp() * (inst.psi1[0] + inner[k])).collect();
    let scale = bound.iter().fold(0.0f64, |m, b| m.max(b.abs())).max(f64::MIN_POSITIVE);
    let tolerance = rtol * scale;
    let integral = cumulative_trapezoid(g, |k| inst.psi2[k] * inst.phi[k]);
    let mut hypothesis_violations = Vec::new();
    let mut bound_violations = Vec::new();
    for k in 0..n {
        if inst.phi[k] > inst.psi1[k] + integral[k] + tolerance {
            hypothesis_violations.push(k);
        } else if inst.phi[k] > bound[k] + tolerance {
            bound_violations.push(k);
        }
    }
    Ok(GronwallReport {
        bound,
        hypothesis_violations,
        bound_violations,
        tolerance,
    })
}

/// M_t/⟨M⟩_t where ⟨M⟩ > 0, None elsewhere.
pub fn slln_diagnostic(m: &[f64], qv: &[f64]) -> Result<Vec<Option<f64>>> {
    if m.len() != qv.len() {
        return Err(Error::InvalidParameter(
            "martingale and variation lengths differ".into(),
        ));
    }
    if qv.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "quadratic variation must be nondecreasing".into(),
        ));
    }
    Ok(m.iter().zip(qv).map(|(&a, &q)| (q > 0.0).then(|| a / q)).collect())
}

/// M = Σ b_i X_i/σ_i ΔB_i and ⟨M⟩ = Σ b_i² X_i²/σ_i² Δt_i along a linear path,
/// so that α̂ − α ≈ M/⟨M⟩.
pub fn martingale_from_path(path: &Path, coeffs: &GridCoefficients) -> (Vec<f64>, Vec<f64>) {
    let n = path.values.len();
    let (mut m, mut q) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n - 1 {
        let w = coeffs.b[i] * path.values[i] / coeffs.sigma[i];
        m[i + 1] = m[i] + w * path.increments[i];
        q[i + 1] = q[i] + w * w * path.grid.dt(i);
    }
    (m, q)
}
