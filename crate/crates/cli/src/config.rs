//! Experiment configuration files and the built-in presets.
//!
//! ```toml
//! [model]
//! family = "ou"
//! alpha = -1.0
//!
//! [grid]
//! kind = "uniform"
//! h = 0.01
//! t_max = 50.0
//!
//! [experiment]
//! horizons = [50.0]
//! replicates = 2000
//! mode = "fisher-sqrt"
//! target = "normal"          # or "cauchy", or { zeta = "plus-inv-sqrt2" }
//! estimator = "linear"
//! seed = 20261016
//! ks_tolerance = 0.05
//! ```

use serde::Deserialize;
use tidiff::coeffs::file::{build_model, CoefficientsSection, ConstantsSection, ModelSection};
use tidiff::estimate::StatisticMode;
use tidiff::mc::{Estimator, ExperimentSpec, TargetLaw, DEFAULT_FISHER_PATHS};
use tidiff::simulate::{GridSpec, DEFAULT_PANELS};

use crate::CliError;

pub const ACCEPTANCE_SEED: u64 = 20261016;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub horizons: Vec<f64>,
    pub replicates: usize,
    pub mode: StatisticMode,
    pub target: Option<TargetLaw>,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fisher_paths")]
    pub fisher_paths: usize,
    pub ks_tolerance: Option<f64>,
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_estimator() -> Estimator {
    Estimator::Linear
}

fn default_fisher_paths() -> usize {
    DEFAULT_FISHER_PATHS
}

fn default_panels() -> usize {
    DEFAULT_PANELS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    pub grid: GridSpec,
    pub experiment: ExperimentSection,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<ExperimentFile, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("experiment config: {e}")))
    }

    pub fn into_spec(self) -> Result<ExperimentSpec, CliError> {
        let model = build_model(&self.model, &self.coefficients, &self.constants)?;
        let e = self.experiment;
        Ok(ExperimentSpec {
            model,
            horizons: e.horizons,
            n_replicates: e.replicates,
            grid: self.grid,
            panels: e.panels,
            mode: e.mode,
            target: e.target,
            seed: e.seed,
            estimator: e.estimator,
            fisher_paths: e.fisher_paths,
            ks_tolerance: e.ks_tolerance,
        })
    }
}

/// Preset names, in the order they are listed by `--preset list`.
pub const PRESETS: &[&str] = &[
    "dickey-fuller",
    "singular-scaling",
    "remark27-singular",
    "cauchy",
    "normal",
    "random-normalization-cauchy",
    "random-normalization-normal",
    "perturbed-singular",
];

/// Config text of a preset. Kept as TOML so that `--preset NAME --print`
/// gives a file that can be edited and fed back with `--config`.
pub fn preset(name: &str) -> Option<String> {
    let seed = ACCEPTANCE_SEED;
    let ou = |alpha: f64, h: &str, t: f64, mode: &str, target: &str, tol: f64| {
        format!(
            r#"[model]
family = "ou"
alpha = {alpha:?}

[grid]
kind = "uniform"
h = {h}
t_max = {t:?}

[experiment]
horizons = [{t:?}]
replicates = 2000
mode = "{mode}"
target = {target}
seed = {seed}
ks_tolerance = {tol}
"#
        )
    };
    Some(match name {
        "dickey-fuller" => ou(
            0.0,
            "0.000244140625",
            1.0,
            "t-times-alpha-hat",
            "{ zeta = \"unit\" }",
            0.05,
        ),
        "singular-scaling" => ou(
            0.0,
            "0.000244140625",
            1.0,
            "fisher-sqrt",
            "{ zeta = \"plus-inv-sqrt2\" }",
            0.05,
        ),
        "cauchy" => ou(1.0, "0.0009765625", 8.0, "fisher-sqrt", "\"cauchy\"", 0.06),
        "normal" => ou(-1.0, "0.01", 50.0, "fisher-sqrt", "\"normal\"", 0.05),
        "random-normalization-cauchy" => ou(1.0, "0.0009765625", 8.0, "random-normalization", "\"normal\"", 0.05),
        "random-normalization-normal" => ou(-1.0, "0.01", 50.0, "random-normalization", "\"normal\"", 0.05),
        "remark27-singular" => format!(
            r#"[model]
family = "remark27-finiteT"
T = 1.0
alpha = 1.0

[coefficients]
sigma = "1"

[grid]
kind = "geometric-to-t"
rho = 0.9972960560854701

[experiment]
horizons = [0.9999990463256836]
replicates = 2000
mode = "fisher-sqrt"
target = {{ zeta = "minus-inv-sqrt2" }}
seed = {seed}
ks_tolerance = 0.06
"#
        ),
        "perturbed-singular" => format!(
            r#"[model]
family = "perturbed-singular"
alpha = 1.0

[grid]
kind = "uniform"
h = 0.0009765625
t_max = 6.0

[experiment]
horizons = [6.0]
replicates = 1000
mode = "fisher-sqrt"
target = {{ zeta = "plus-inv-sqrt2" }}
estimator = "perturbed"
fisher_paths = 500
seed = {seed}
ks_tolerance = 0.08
"#
        ),
        _ => return None,
    })
}

pub fn preset_spec(name: &str) -> Result<ExperimentSpec, CliError> {
    let text = preset(name)
        .ok_or_else(|| CliError::config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", "))))?;
    ExperimentFile::parse(&text)?.into_spec()
}

/// True when the target needs the ζ oracle.
pub fn needs_oracle(spec: &ExperimentSpec) -> bool {
    matches!(spec.target, Some(TargetLaw::Zeta(_)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tidiff::coeffs::Horizon;
    use tidiff::limitlaws::ZetaScale;
    use tidiff::simulate::make_grid;

    #[test]
    fn every_preset_parses() {
        for name in PRESETS {
            let spec = preset_spec(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(spec.seed, ACCEPTANCE_SEED);
            let grid = make_grid(&spec.grid, spec.model.horizon).unwrap();
            for &t in &spec.horizons {
                assert!(grid.index_of(t).is_some(), "{name}: {t} is not a node");
            }
        }
        assert!(preset_spec("nope").is_err());
    }

    #[test]
    fn remark27_preset_grid() {
        let spec = preset_spec("remark27-singular").unwrap();
        assert_eq!(spec.model.horizon, Horizon::Finite(1.0));
        let grid = make_grid(&spec.grid, spec.model.horizon).unwrap();
        assert_eq!(grid.intervals(), 5120);
        assert_eq!(grid.end(), 1.0 - 2f64.powi(-20));
        assert_eq!(spec.horizons[0], grid.end());
        assert_eq!(spec.target, Some(TargetLaw::Zeta(ZetaScale::MinusInvSqrt2)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = preset("normal")
            .unwrap()
            .replace("replicates = 2000", "replicates = 2000\ncolour = 1");
        assert!(ExperimentFile::parse(&text).is_err());
    }
}
