//! Composite Simpson quadrature and the cumulative integral profile of a
//! linear model.
//!
//! The profile carries, at every node t of a grid,
//!
//! ```text
//! B(t)    = ∫₀ᵗ b
//! A(t)    = ∫₀ᵗ |b|
//! Q(t)    = ∫₀ᵗ σ² e^{−2αB}                     (energy)
//! m2(t)   = E X_t² = e^{2αB(t)} Q(t)
//! I(t)    = ∫₀ᵗ b²/σ² · m2                      (Fisher information)
//! ```
//!
//! in a single pass. Q, m2 and I are accumulated in log space since they
//! grow like e^{2|α|t} on the infinite horizon.

use crate::coeffs::{CoeffError, EvalError, ModelSpec};
use crate::error::{Error, Result};

/// Composite Simpson rule with `panels` panels, each using its midpoint.
pub fn simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    simpson_try(|x| Ok::<f64, ()>(f(x)), a, b, panels).unwrap_or(f64::NAN)
}

pub fn simpson_try<E>(
    mut f: impl FnMut(f64) -> std::result::Result<f64, E>,
    a: f64,
    b: f64,
    panels: usize,
) -> std::result::Result<f64, E> {
    let n = panels.max(1);
    let h = (b - a) / n as f64;
    let mut sum = f(a)? + f(b)?;
    for j in 0..n {
        sum += 4.0 * f(a + (j as f64 + 0.5) * h)?;
        if j > 0 {
            sum += 2.0 * f(a + j as f64 * h)?;
        }
    }
    Ok(sum * h / 6.0)
}

/// Integral of the quadratic through (0, f0), (H/2, fm), (H, f1) over [0, H/2].
#[inline]
pub fn half_panel(h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
    h / 24.0 * (5.0 * f0 + 8.0 * fm - f1)
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

fn log_simpson(h: f64, l0: f64, lm: f64, l1: f64) -> f64 {
    let s = l0.max(lm).max(l1);
    if s == f64::NEG_INFINITY {
        return s;
    }
    (h / 6.0).ln() + s + ((l0 - s).exp() + 4.0 * (lm - s).exp() + (l1 - s).exp()).ln()
}

fn log_half_panel(h: f64, l0: f64, lm: f64, l1: f64) -> f64 {
    let s = l0.max(lm).max(l1);
    if s == f64::NEG_INFINITY {
        return s;
    }
    let (e0, em, e1) = ((l0 - s).exp(), (lm - s).exp(), (l1 - s).exp());
    let v = 5.0 * e0 + 8.0 * em - e1;
    if v > 0.0 {
        (h / 24.0).ln() + s + v.ln()
    } else {
        // Steep integrand: the quadratic dips below zero, fall back to trapezoid.
        (h / 4.0).ln() + s + (e0 + em).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Minimum number of Simpson panels per grid interval.
    pub min_panels: usize,
    /// Upper bound on the panel width.
    pub max_step: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            min_panels: 8,
            max_step: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub nodes: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub int_b: Vec<f64>,
    pub int_abs_b: Vec<f64>,
    pub log_energy: Vec<f64>,
    pub log_m2: Vec<f64>,
    pub log_fisher: Vec<f64>,
    /// First requested node that could not be reached because a coefficient
    /// or an accumulated integral stopped being finite.
    pub truncated_at: Option<f64>,
}

#[derive(Clone, Copy)]
struct Point {
    b: f64,
    log_sigma2: f64,
}

enum Stop {
    Overflow,
    Fatal(Error),
}

fn point(model: &ModelSpec, t: f64) -> std::result::Result<Point, Stop> {
    let classify = |what: &'static str, e: CoeffError| match e {
        CoeffError::Eval(EvalError::NonFinite) => Stop::Overflow,
        source => Stop::Fatal(Error::Coefficient { what, point: t, source }),
    };
    let b = model.b.eval(t).map_err(|e| classify("b", e))?;
    let sigma = model.sigma.eval(t).map_err(|e| classify("sigma", e))?;
    if sigma <= 0.0 {
        return Err(Stop::Fatal(Error::Precondition(format!(
            "sigma must be positive, sigma({t}) = {sigma}"
        ))));
    }
    Ok(Point {
        b,
        log_sigma2: 2.0 * sigma.ln(),
    })
}

/// Cumulative integrals of `model` with drift parameter `alpha` at the given
/// nodes. `nodes` must start at 0 and increase strictly.
pub fn profile(model: &ModelSpec, alpha: f64, nodes: &[f64], cfg: QuadConfig) -> Result<Profile> {
    if nodes.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("profile nodes must start at 0".into()));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("profile nodes must increase strictly".into()));
    }
    let mut out = Profile {
        nodes: Vec::with_capacity(nodes.len()),
        b: Vec::with_capacity(nodes.len()),
        sigma: Vec::with_capacity(nodes.len()),
        int_b: Vec::with_capacity(nodes.len()),
        int_abs_b: Vec::with_capacity(nodes.len()),
        log_energy: Vec::with_capacity(nodes.len()),
        log_m2: Vec::with_capacity(nodes.len()),
        log_fisher: Vec::with_capacity(nodes.len()),
        truncated_at: None,
    };
    let mut p0 = match point(model, 0.0) {
        Ok(p) => p,
        Err(Stop::Fatal(e)) => return Err(e),
        Err(Stop::Overflow) => {
            return Err(Error::NonFinite {
                what: "coefficient at t = 0".into(),
                last_safe: 0.0,
            })
        }
    };
    let (mut big_b, mut abs_b) = (0.0f64, 0.0f64);
    let (mut lq, mut li) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let push = |out: &mut Profile, t: f64, p: &Point, big_b: f64, abs_b: f64, lq: f64, li: f64| {
        out.nodes.push(t);
        out.b.push(p.b);
        out.sigma.push((0.5 * p.log_sigma2).exp());
        out.int_b.push(big_b);
        out.int_abs_b.push(abs_b);
        out.log_energy.push(lq);
        out.log_m2.push(2.0 * alpha * big_b + lq);
        out.log_fisher.push(li);
    };
    push(&mut out, 0.0, &p0, big_b, abs_b, lq, li);

    let log_k = |p: &Point, big_b: f64, lq: f64| -> f64 {
        if p.b == 0.0 || lq == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            2.0 * p.b.abs().ln() - p.log_sigma2 + 2.0 * alpha * big_b + lq
        }
    };

    'nodes: for w in nodes.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let panels = cfg.min_panels.max(((t1 - t0) / cfg.max_step).ceil() as usize).max(1);
        let h = (t1 - t0) / panels as f64;
        let (mut nb, mut na, mut nq, mut ni) = (big_b, abs_b, lq, li);
        let mut pa = p0;
        for j in 0..panels {
            let u0 = t0 + j as f64 * h;
            let u1 = if j + 1 == panels { t1 } else { t0 + (j + 1) as f64 * h };
            let hj = u1 - u0;
            let evaluated = point(model, u0 + 0.5 * hj).and_then(|pm| Ok((pm, point(model, u1)?)));
            let (pm, pb) = match evaluated {
                Ok(v) => v,
                Err(Stop::Overflow) => {
                    out.truncated_at = Some(t1);
                    break 'nodes;
                }
                Err(Stop::Fatal(e)) => return Err(e),
            };
            let bm = nb + half_panel(hj, pa.b, pm.b, pb.b);
            let b1 = nb + hj / 6.0 * (pa.b + 4.0 * pm.b + pb.b);
            let a1 = na + hj / 6.0 * (pa.b.abs() + 4.0 * pm.b.abs() + pb.b.abs());
            let lg0 = pa.log_sigma2 - 2.0 * alpha * nb;
            let lgm = pm.log_sigma2 - 2.0 * alpha * bm;
            let lg1 = pb.log_sigma2 - 2.0 * alpha * b1;
            let lqm = log_add_exp(nq, log_half_panel(hj, lg0, lgm, lg1));
            let lq1 = log_add_exp(nq, log_simpson(hj, lg0, lgm, lg1));
            let lk0 = log_k(&pa, nb, nq);
            let lkm = log_k(&pm, bm, lqm);
            let lk1 = log_k(&pb, b1, lq1);
            let li1 = log_add_exp(ni, log_simpson(hj, lk0, lkm, lk1));
            if !(b1.is_finite() && a1.is_finite())
                || lq1.is_nan()
                || li1.is_nan()
                || lq1 == f64::INFINITY
                || li1 == f64::INFINITY
            {
                out.truncated_at = Some(t1);
                break 'nodes;
            }
            nb = b1;
            na = a1;
            nq = lq1;
            ni = li1;
            pa = pb;
        }
        big_b = nb;
        abs_b = na;
        lq = nq;
        li = ni;
        p0 = pa;
        push(&mut out, t1, &p0, big_b, abs_b, lq, li);
    }
    Ok(out)
}

impl Profile {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn fisher(&self) -> Vec<f64> {
        self.log_fisher.iter().map(|l| l.exp()).collect()
    }

    pub fn second_moment(&self) -> Vec<f64> {
        self.log_m2.iter().map(|l| l.exp()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Horizon;

    fn ou(alpha: f64) -> ModelSpec {
        ModelSpec::linear("ou", Horizon::Infinite, "1", "1", alpha).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1);
        assert!((v - 2.0).abs() < 1e-14);
        let v = simpson(f64::exp, 0.0, 1.0, 8);
        assert!(rel(v, 1f64.exp() - 1.0) < 1e-6);
    }

    #[test]
    fn half_panel_matches_quadratic() {
        // f = 1 + 2x + 3x² on [0, 1]; ∫₀^½ f = 1/2 + 1/4 + 1/8
        let v = half_panel(1.0, 1.0, 1.0 + 1.0 + 0.75, 6.0);
        assert!((v - 0.875).abs() < 1e-15);
    }

    #[test]
    fn ou_closed_forms() {
        let nodes = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
        let p0 = profile(&ou(0.0), 0.0, &nodes, QuadConfig::default()).unwrap();
        for (k, &t) in nodes.iter().enumerate().skip(1) {
            assert!(rel(p0.fisher()[k], t * t / 2.0) < 1e-12);
            assert!(rel(p0.second_moment()[k], t) < 1e-12);
        }
        let p1 = profile(&ou(1.0), 1.0, &nodes, QuadConfig::default()).unwrap();
        for (k, &t) in nodes.iter().enumerate().skip(1) {
            let m2 = ((2.0 * t).exp() - 1.0) / 2.0;
            let fisher = ((2.0 * t).exp() - 1.0) / 4.0 - t / 2.0;
            assert!(rel(p1.second_moment()[k], m2) < 1e-9, "m2 at {t}");
            assert!(rel(p1.fisher()[k], fisher) < 1e-7, "I at {t}");
            assert!(rel(p1.log_energy[k].exp(), (1.0 - (-2.0 * t).exp()) / 2.0) < 1e-9);
        }
        let pm = profile(&ou(-1.0), -1.0, &nodes, QuadConfig::default()).unwrap();
        for (k, &t) in nodes.iter().enumerate().skip(1) {
            let m2 = (1.0 - (-2.0 * t).exp()) / 2.0;
            let fisher = t / 2.0 - (1.0 - (-2.0 * t).exp()) / 4.0;
            assert!(rel(pm.second_moment()[k], m2) < 1e-9);
            assert!(rel(pm.fisher()[k], fisher) < 1e-7);
        }
    }

    #[test]
    fn log_space_survives_large_horizons() {
        let nodes = [0.0, 1000.0, 4000.0];
        let p = profile(&ou(1.0), 1.0, &nodes, QuadConfig::default()).unwrap();
        assert!(p.truncated_at.is_none());
        // ln I(t) ≈ 2t − ln 4
        assert!((p.log_fisher[2] - (8000.0 - 4f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn truncates_where_sigma_overflows() {
        let m = ModelSpec::linear("m", Horizon::Infinite, "1", "exp(t)", 1.0).unwrap();
        let p = profile(&m, 1.0, &[0.0, 100.0, 600.0, 800.0, 900.0], QuadConfig::default()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.truncated_at, Some(800.0));
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let m = ModelSpec::linear("m", Horizon::Finite(1.0), "1", "t", 1.0).unwrap();
        assert!(matches!(
            profile(&m, 1.0, &[0.0, 0.5], QuadConfig::default()),
            Err(Error::Precondition(_))
        ));
    }
}
