//! Model files.
//!
//! ```toml
//! [model]
//! name = "damped"
//! T = inf            # or a positive number
//! alpha = -1.0
//!
//! [coefficients]
//! b = "exp(-t) + 1"
//! sigma = "1"
//! r = "0.5*sin(x)"   # optional; "dietz-kutoyants" selects the built-in
//!
//! [constants]        # required with r
//! L = 0.5
//! gamma = 0.0
//! M = 0.5
//! ```
//!
//! `family = "<registry name>"` in `[model]` starts from a named family
//! instead; the family then fixes b and r, and only `sigma` and `sigma_tail`
//! may be given for the families that take a user σ.

use serde::Deserialize;

use super::registry::{self, Overrides};
use super::{CoeffFn, Horizon, ModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub family: Option<String>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    pub b: Option<String>,
    pub sigma: Option<String>,
    pub r: Option<String>,
    pub sigma_tail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(rename = "L")]
    pub growth: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "M")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub constants: ConstantsSection,
}

pub fn parse_model_file(text: &str) -> Result<ModelSpec> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("model file: {e}")))?;
    build_model(&file.model, &file.coefficients, &file.constants)
}

pub fn build_model(m: &ModelSection, c: &CoefficientsSection, k: &ConstantsSection) -> Result<ModelSpec> {
    let horizon = m.horizon.map(Horizon::from_value).transpose()?;
    let constants_given = k.growth.is_some() || k.gamma.is_some() || k.lipschitz.is_some();
    if let Some(family) = &m.family {
        if c.b.is_some() || c.r.is_some() || constants_given {
            return Err(Error::InvalidParameter(format!(
                "family '{family}' fixes b, r and their constants"
            )));
        }
        let mut spec = registry::lookup(
            family,
            &Overrides {
                alpha: m.alpha,
                horizon,
                sigma: c.sigma.clone(),
                sigma_tail: c.sigma_tail.clone(),
            },
        )?;
        if let Some(name) = &m.name {
            spec.name = name.clone();
        }
        return Ok(spec);
    }
    if c.sigma_tail.is_some() {
        return Err(Error::InvalidParameter(
            "sigma_tail needs family = \"remark27-finiteT\"".into(),
        ));
    }
    let missing = |what: &str| Error::InvalidParameter(format!("missing {what}"));
    let b = c.b.as_deref().ok_or_else(|| missing("coefficients.b"))?;
    let sigma = c.sigma.as_deref().ok_or_else(|| missing("coefficients.sigma"))?;
    let alpha = m.alpha.ok_or_else(|| missing("model.alpha"))?;
    let name = m.name.as_deref().unwrap_or("custom");
    let spec = ModelSpec::linear(name, horizon.unwrap_or(Horizon::Infinite), b, sigma, alpha)?;
    match &c.r {
        None if constants_given => Err(Error::InvalidParameter("[constants] given without r".into())),
        None => Ok(spec),
        Some(text) => {
            let r = CoeffFn::state(text).map_err(|source| Error::Parse {
                context: format!("coefficient r = \"{text}\""),
                source,
            })?;
            spec.with_perturbation(
                r,
                k.growth.ok_or_else(|| missing("constants.L"))?,
                k.gamma.ok_or_else(|| missing("constants.gamma"))?,
                k.lipschitz.ok_or_else(|| missing("constants.M"))?,
            )
        }
    }
}
