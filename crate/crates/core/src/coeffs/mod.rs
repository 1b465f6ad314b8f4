//! Coefficient functions b(t), σ(t), r(x) and the model specification.

mod expr;
pub mod file;
pub mod registry;
mod validate;

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

pub use expr::{parse_expr, BinaryOp, EvalError, Expr, ParseError, ParseErrorKind, UnaryFn, Variable};
pub use validate::{validate_model, Check, CheckStatus, Evidence, ValidationReport};

use crate::error::{Error, Result};

/// End of the time interval [0, T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn from_value(t: f64) -> Result<Horizon> {
        if t == f64::INFINITY {
            Ok(Horizon::Infinite)
        } else if t.is_finite() && t > 0.0 {
            Ok(Horizon::Finite(t))
        } else {
            Err(Error::InvalidParameter(format!("horizon T must be positive, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Horizon::Finite(t) => t,
            Horizon::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Horizon::Finite(_))
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Finite(t) => s.serialize_f64(*t),
            Horizon::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Perturbations with no expression form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Piecewise r that cancels the linear drift on [-1, 1]:
    /// `1/(1+(x+1)^2)` left of -1, `-x` on [-1, 1), `-1/(1+(x-1)^2)` right of 1.
    DietzKutoyants,
}

impl Builtin {
    pub const DIETZ_KUTOYANTS_NAME: &'static str = "dietz-kutoyants";

    fn eval(self, x: f64) -> f64 {
        match self {
            Builtin::DietzKutoyants => {
                let c = x.clamp(-1.0, 1.0);
                let d = x - c;
                -c / (1.0 + d * d)
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Builtin::DietzKutoyants => Self::DIETZ_KUTOYANTS_NAME,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Expr(Expr),
    Builtin(Builtin),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CoeffError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("point {0} is outside the domain")]
    OutOfDomain(f64),
}

/// A coefficient together with its variable and domain. Time coefficients
/// live on [0, T); state coefficients on the whole line.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffFn {
    source: Source,
    variable: Variable,
    text: String,
    upper: f64,
}

impl CoeffFn {
    pub fn time(text: &str, horizon: Horizon) -> std::result::Result<CoeffFn, ParseError> {
        Ok(CoeffFn {
            source: Source::Expr(parse_expr(text, Variable::Time)?),
            variable: Variable::Time,
            text: text.trim().to_string(),
            upper: horizon.value(),
        })
    }

    pub fn state(text: &str) -> std::result::Result<CoeffFn, ParseError> {
        if text.trim() == Builtin::DIETZ_KUTOYANTS_NAME {
            return Ok(CoeffFn::builtin(Builtin::DietzKutoyants));
        }
        Ok(CoeffFn {
            source: Source::Expr(parse_expr(text, Variable::State)?),
            variable: Variable::State,
            text: text.trim().to_string(),
            upper: f64::INFINITY,
        })
    }

    pub fn builtin(b: Builtin) -> CoeffFn {
        CoeffFn {
            source: Source::Builtin(b),
            variable: Variable::State,
            text: b.name().to_string(),
            upper: f64::INFINITY,
        }
    }

    pub fn eval(&self, point: f64) -> std::result::Result<f64, CoeffError> {
        let in_domain = match self.variable {
            Variable::Time => point >= 0.0 && point < self.upper,
            Variable::State => point.is_finite(),
        };
        if !in_domain {
            return Err(CoeffError::OutOfDomain(point));
        }
        match &self.source {
            Source::Expr(e) => Ok(e.eval(point)?),
            Source::Builtin(b) => {
                let v = b.eval(point);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(CoeffError::Eval(EvalError::NonFinite))
                }
            }
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.source {
            Source::Expr(e) => Some(e),
            Source::Builtin(_) => None,
        }
    }

    /// The value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        match &self.source {
            Source::Expr(e) if e.is_constant() => e.eval(0.0).ok(),
            _ => None,
        }
    }
}

/// The state perturbation r and its declared growth and Lipschitz constants:
/// |r(x)| ≤ L(1 + |x|^γ) and |r(x) − r(y)| ≤ M|x − y|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    #[serde(serialize_with = "serialize_text")]
    pub r: CoeffFn,
    #[serde(rename = "L")]
    pub growth: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub lipschitz: f64,
}

fn serialize_text<S: Serializer>(f: &CoeffFn, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(f.text())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: Horizon,
    #[serde(serialize_with = "serialize_text")]
    pub b: CoeffFn,
    #[serde(serialize_with = "serialize_text")]
    pub sigma: CoeffFn,
    pub perturbation: Option<Perturbation>,
    pub alpha: f64,
}

fn parse_time(what: &str, text: &str, horizon: Horizon) -> Result<CoeffFn> {
    CoeffFn::time(text, horizon).map_err(|source| Error::Parse {
        context: format!("coefficient {what} = \"{text}\""),
        source,
    })
}

impl ModelSpec {
    /// The linear model with coefficient expressions in `t`.
    pub fn linear(name: &str, horizon: Horizon, b: &str, sigma: &str, alpha: f64) -> Result<ModelSpec> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
        }
        if let Horizon::Finite(t) = horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("horizon T must be positive, got {t}")));
            }
        }
        Ok(ModelSpec {
            name: name.to_string(),
            horizon,
            b: parse_time("b", b, horizon)?,
            sigma: parse_time("sigma", sigma, horizon)?,
            perturbation: None,
            alpha,
        })
    }

    pub fn with_perturbation(mut self, r: CoeffFn, growth: f64, gamma: f64, lipschitz: f64) -> Result<ModelSpec> {
        if !(growth >= 0.0 && growth.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be nonnegative, got {growth}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "M must be nonnegative, got {lipschitz}"
            )));
        }
        if r.variable() != Variable::State {
            return Err(Error::InvalidParameter("r must be a function of x".into()));
        }
        self.perturbation = Some(Perturbation {
            r,
            growth,
            gamma,
            lipschitz,
        });
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> ModelSpec {
        self.alpha = alpha;
        self
    }

    pub fn is_linear(&self) -> bool {
        self.perturbation.is_none()
    }

    /// The same model with r removed.
    pub fn linear_part(&self) -> ModelSpec {
        ModelSpec {
            perturbation: None,
            ..self.clone()
        }
    }

    pub fn b_at(&self, t: f64) -> Result<f64> {
        self.b.eval(t).map_err(|source| Error::Coefficient {
            what: "b",
            point: t,
            source,
        })
    }

    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        self.sigma.eval(t).map_err(|source| Error::Coefficient {
            what: "sigma",
            point: t,
            source,
        })
    }

    /// a(x) = x + r(x), or x for the linear model.
    pub fn a_at(&self, x: f64) -> Result<f64> {
        match &self.perturbation {
            None => Ok(x),
            Some(p) => p.r.eval(x).map(|r| x + r).map_err(|source| Error::Coefficient {
                what: "r",
                point: x,
                source,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let one = CoeffFn::time("1", Horizon::Infinite).unwrap();
        assert_eq!(one.eval(3.7), Ok(1.0));
        let family = CoeffFn::time("-(1/(2*1))*(1/(1-t))", Horizon::Finite(1.0)).unwrap();
        assert!((family.eval(0.5).unwrap() + 1.0).abs() < 1e-15);
        let ln = CoeffFn::time("ln(t)", Horizon::Infinite).unwrap();
        assert_eq!(ln.eval(0.0), Err(CoeffError::Eval(EvalError::LogDomain(0.0))));
    }

    #[test]
    fn time_domain_is_half_open() {
        let f = CoeffFn::time("t", Horizon::Finite(1.0)).unwrap();
        assert!(f.eval(0.999).is_ok());
        assert_eq!(f.eval(1.0), Err(CoeffError::OutOfDomain(1.0)));
        assert_eq!(f.eval(-0.1), Err(CoeffError::OutOfDomain(-0.1)));
        assert!(f.eval(f64::NAN).is_err());
    }

    #[test]
    fn dietz_kutoyants_pieces() {
        let r = CoeffFn::builtin(Builtin::DietzKutoyants);
        assert_eq!(r.eval(0.3).unwrap(), -0.3);
        assert_eq!(r.eval(-1.0).unwrap(), 1.0);
        assert!((r.eval(-3.0).unwrap() - 1.0 / 5.0).abs() < 1e-15);
        assert!((r.eval(2.0).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(r.eval(1.0).unwrap(), -1.0);
        // a vanishes exactly on [-1, 1]
        for x in [-1.0, -0.7, 0.0, 0.123456789, 1.0] {
            assert_eq!(x + r.eval(x).unwrap(), 0.0);
        }
        assert_eq!(CoeffFn::state("dietz-kutoyants").unwrap(), r);
    }

    #[test]
    fn constants_are_checked() {
        let m = ModelSpec::linear("m", Horizon::Infinite, "1", "1", 1.0).unwrap();
        let r = CoeffFn::state("0.5*sin(x)").unwrap();
        assert!(m.clone().with_perturbation(r.clone(), 0.5, 1.0, 0.5).is_err());
        assert!(m.clone().with_perturbation(r.clone(), -1.0, 0.0, 0.5).is_err());
        let p = m.with_perturbation(r, 0.5, 0.0, 0.5).unwrap();
        assert!((p.a_at(1.0).unwrap() - (1.0 + 0.5 * 1f64.sin())).abs() < 1e-15);
        assert!(ModelSpec::linear("m", Horizon::Infinite, "x", "1", 1.0).is_err());
        assert!(ModelSpec::linear("m", Horizon::Infinite, "1", "1", f64::NAN).is_err());
    }
}
