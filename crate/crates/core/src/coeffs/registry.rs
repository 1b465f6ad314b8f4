//! Named model families.
//!
//! | name                     | b(t)                          | σ(t)     | r(x)              |
//! |--------------------------|-------------------------------|----------|-------------------|
//! | `ou`                     | 1                             | 1        |                   |
//! | `remark27-finiteT`       | −σ(t)²/(2α ∫ₜᵀ σ²)            | user     |                   |
//! | `remark27-alpha0`        | σ(t)²                         | user     |                   |
//! | `luschgy-counterexample` | −e^{−t}                       | 1        |                   |
//! | `dietz-kutoyants`        | 1                             | 1        | built-in piecewise|
//! | `perturbed-singular`     | 1                             | e^t      | 0.5 sin x         |
//!
//! For `remark27-finiteT` the tail integral ∫ₜᵀ σ² is derived automatically
//! when σ is constant and must otherwise be supplied as an expression in t.
//! Either way it is checked against quadrature before the model is built.

use super::{parse_expr, Builtin, CoeffFn, Horizon, ModelSpec, Variable};
use crate::error::{Error, Result};
use crate::quad::simpson_try;

pub const NAMES: &[&str] = &[
    "ou",
    "remark27-finiteT",
    "remark27-alpha0",
    "luschgy-counterexample",
    "dietz-kutoyants",
    "perturbed-singular",
];

/// Caller-supplied values that replace a family's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub horizon: Option<Horizon>,
    pub sigma: Option<String>,
    pub sigma_tail: Option<String>,
}

const TAIL_RTOL: f64 = 1e-6;

pub fn lookup(name: &str, o: &Overrides) -> Result<ModelSpec> {
    let user_sigma = matches!(name, "remark27-finiteT" | "remark27-alpha0");
    if !user_sigma && o.sigma.is_some() {
        return Err(Error::InvalidParameter(format!("model '{name}' has a fixed sigma")));
    }
    if name != "remark27-finiteT" && o.sigma_tail.is_some() {
        return Err(Error::InvalidParameter(format!(
            "sigma_tail only applies to remark27-finiteT, not '{name}'"
        )));
    }
    let alpha = o.alpha.unwrap_or(if name == "remark27-alpha0" { 0.0 } else { 1.0 });
    let infinite = o.horizon.unwrap_or(Horizon::Infinite);
    let sigma = o.sigma.as_deref().unwrap_or("1");
    match name {
        "ou" => ModelSpec::linear(name, infinite, "1", "1", alpha),
        "luschgy-counterexample" => ModelSpec::linear(name, infinite, "-exp(-t)", "1", alpha),
        "remark27-alpha0" => ModelSpec::linear(name, infinite, &format!("({sigma})^2"), sigma, alpha),
        "remark27-finiteT" => {
            let horizon = o.horizon.unwrap_or(Horizon::Finite(1.0));
            remark27_finite(horizon, sigma, o.sigma_tail.as_deref(), alpha)
        }
        "dietz-kutoyants" => ModelSpec::linear(name, infinite, "1", "1", alpha)?.with_perturbation(
            CoeffFn::builtin(Builtin::DietzKutoyants),
            0.5,
            0.0,
            1.0,
        ),
        "perturbed-singular" => ModelSpec::linear(name, infinite, "1", "exp(t)", alpha)?.with_perturbation(
            CoeffFn::state("0.5*sin(x)").expect("literal parses"),
            0.5,
            0.0,
            0.5,
        ),
        _ => Err(Error::InvalidParameter(format!(
            "unknown model '{name}' (known: {})",
            NAMES.join(", ")
        ))),
    }
}

/// b(t) = −σ(t)²/(2α ∫ₜᵀ σ²), which makes (b/σ²)·e^{2α∫b} constant and equal
/// to −1/(2α ∫₀ᵀ σ²).
pub fn remark27_finite(horizon: Horizon, sigma: &str, sigma_tail: Option<&str>, alpha: f64) -> Result<ModelSpec> {
    let Horizon::Finite(t_end) = horizon else {
        return Err(Error::InvalidParameter(
            "remark27-finiteT needs a finite horizon T".into(),
        ));
    };
    if alpha == 0.0 {
        return Err(Error::InvalidParameter(
            "remark27-finiteT needs alpha != 0 (use remark27-alpha0)".into(),
        ));
    }
    let sigma_fn = CoeffFn::time(sigma, horizon).map_err(|source| Error::Parse {
        context: format!("coefficient sigma = \"{sigma}\""),
        source,
    })?;
    let tail = match (sigma_tail, sigma_fn.constant_value()) {
        (Some(text), _) => text.to_string(),
        (None, Some(c)) => format!("{:?}*({:?} - t)", c * c, t_end),
        (None, None) => {
            return Err(Error::InvalidParameter(
                "non-constant sigma needs sigma_tail, the integral of sigma^2 from t to T".into(),
            ))
        }
    };
    check_tail(&sigma_fn, &tail, t_end)?;
    let b = format!("-(({sigma})^2)/(2*({alpha:?})*({tail}))");
    ModelSpec::linear("remark27-finiteT", horizon, &b, sigma, alpha)
}

fn check_tail(sigma: &CoeffFn, tail: &str, t_end: f64) -> Result<()> {
    let expr = parse_expr(tail, Variable::Time).map_err(|source| Error::Parse {
        context: format!("sigma_tail = \"{tail}\""),
        source,
    })?;
    let eval = |t: f64| {
        expr.eval(t)
            .map_err(|e| Error::InvalidParameter(format!("sigma_tail at t = {t}: {e}")))
    };
    let s0 = eval(0.0)?;
    if !(s0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_tail must be positive at t = 0, got {s0}"
        )));
    }
    let s_end = eval(t_end)?;
    if s_end.abs() > TAIL_RTOL * s0 {
        return Err(Error::InvalidParameter(format!(
            "sigma_tail must vanish at T = {t_end}, got {s_end}"
        )));
    }
    let last = t_end * (1.0 - 2f64.powi(-10));
    let probes: Vec<f64> = (0..=16).map(|j| last * j as f64 / 16.0).collect();
    for w in probes.windows(2) {
        let quad = simpson_try(
            |u| {
                sigma
                    .eval(u)
                    .map(|s| s * s)
                    .map_err(|e| Error::InvalidParameter(format!("sigma at {u}: {e}")))
            },
            w[0],
            w[1],
            64,
        )?;
        let diff = eval(w[0])? - eval(w[1])?;
        if (diff - quad).abs() > TAIL_RTOL * quad.abs().max(1e-300) {
            return Err(Error::InvalidParameter(format!(
                "sigma_tail disagrees with the integral of sigma^2 on [{}, {}]: {diff} vs {quad}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}
