//! The frozen acceptance experiments and the reference ζ sample they are
//! checked against.

use std::path::Path;

use tidiff::coeffs::registry::{lookup, Overrides};
use tidiff::coeffs::{Horizon, ModelSpec};
use tidiff::estimate::StatisticMode;
use tidiff::limitlaws::{ZetaOracle, ZetaScale};
use tidiff::mc::{Estimator, ExperimentSpec, TargetLaw, DEFAULT_FISHER_PATHS};
use tidiff::simulate::{GridSpec, DEFAULT_PANELS};

pub const SEED: u64 = 20261016;

pub const ORACLE_N: usize = 100_000;
pub const ORACLE_STEPS: usize = 1 << 14;
pub const ORACLE_SEED: u64 = 7_340_033;

/// Loads the reference ζ sample from `path`, or generates and writes it when
/// the file is missing, corrupt, or was made with other parameters.
pub fn reference_oracle(path: &Path) -> tidiff::Result<ZetaOracle> {
    if let Ok(o) = ZetaOracle::load(path) {
        if o.n == ORACLE_N && o.steps == ORACLE_STEPS && o.base_seed == ORACLE_SEED {
            return Ok(o);
        }
    }
    let o = ZetaOracle::generate(ORACLE_N, ORACLE_STEPS, ORACLE_SEED)?;
    o.write(path)?;
    Ok(o)
}

pub fn model(name: &str, alpha: f64, horizon: Option<Horizon>) -> ModelSpec {
    lookup(
        name,
        &Overrides {
            alpha: Some(alpha),
            horizon,
            ..Overrides::default()
        },
    )
    .expect("registry model")
}

/// One horizon on a uniform grid ending there, linear estimator.
pub fn uniform_spec(
    m: ModelSpec,
    h: f64,
    t: f64,
    n: usize,
    mode: StatisticMode,
    target: TargetLaw,
    tol: f64,
) -> ExperimentSpec {
    ExperimentSpec {
        model: m,
        horizons: vec![t],
        n_replicates: n,
        grid: GridSpec::Uniform { h, t_max: t },
        panels: DEFAULT_PANELS,
        mode,
        target: Some(target),
        seed: SEED,
        estimator: Estimator::Linear,
        fisher_paths: DEFAULT_FISHER_PATHS,
        ks_tolerance: Some(tol),
    }
}

/// The distributional experiments, by name.
pub fn experiments() -> Vec<(&'static str, ExperimentSpec)> {
    use StatisticMode::*;
    let ou = |a| model("ou", a, None);
    let df = |mode, scale| uniform_spec(ou(0.0), 2f64.powi(-12), 1.0, 2000, mode, TargetLaw::Zeta(scale), 0.05);
    let finite_t = ExperimentSpec {
        model: model("remark27-finiteT", 1.0, Some(Horizon::Finite(1.0))),
        horizons: vec![1.0 - 2f64.powi(-20)],
        // 5120 intervals, the last node at T − 2⁻²⁰
        grid: GridSpec::GeometricToT {
            rho: 2f64.powf(-20.0 / 5120.0),
            count: None,
            delta: None,
        },
        ..df(FisherSqrt, ZetaScale::MinusInvSqrt2)
    };
    let finite_t = ExperimentSpec {
        ks_tolerance: Some(0.06),
        ..finite_t
    };
    let perturbed = ExperimentSpec {
        estimator: Estimator::Perturbed,
        ..uniform_spec(
            model("perturbed-singular", 1.0, None),
            2f64.powi(-10),
            6.0,
            1000,
            FisherSqrt,
            TargetLaw::Zeta(ZetaScale::PlusInvSqrt2),
            0.08,
        )
    };
    let explosive = |mode, target, tol| uniform_spec(ou(1.0), 2f64.powi(-10), 8.0, 2000, mode, target, tol);
    let stable = |mode| uniform_spec(ou(-1.0), 0.01, 50.0, 2000, mode, TargetLaw::Normal, 0.05);
    vec![
        ("dickey-fuller", df(TTimesAlphaHat, ZetaScale::Unit)),
        ("singular-scaling", df(FisherSqrt, ZetaScale::PlusInvSqrt2)),
        ("remark27-singular", finite_t),
        ("cauchy", explosive(FisherSqrt, TargetLaw::Cauchy, 0.06)),
        ("normal", stable(FisherSqrt)),
        (
            "random-normalization-cauchy",
            explosive(RandomNormalization, TargetLaw::Normal, 0.05),
        ),
        ("random-normalization-normal", stable(RandomNormalization)),
        ("perturbed-singular", perturbed),
    ]
}

/// The Dietz–Kutoyants setup for the existence probability: 10⁴ perturbed
/// paths on a 2⁻¹² grid up to t = 1.
pub fn existence_spec() -> ExperimentSpec {
    ExperimentSpec {
        estimator: Estimator::Perturbed,
        target: None,
        ks_tolerance: None,
        ..uniform_spec(
            model("dietz-kutoyants", 1.0, None),
            2f64.powi(-12),
            1.0,
            10_000,
            StatisticMode::RawAlphaHat,
            TargetLaw::Normal,
            1.0,
        )
    }
}

/// 200 replicates of OU with α = `alpha`, read along `ladder`.
pub fn consistency_spec(alpha: f64, h: f64, ladder: &[f64]) -> ExperimentSpec {
    let t_max = *ladder.last().expect("nonempty ladder");
    ExperimentSpec {
        horizons: ladder.to_vec(),
        target: None,
        ks_tolerance: None,
        ..uniform_spec(
            model("ou", alpha, None),
            h,
            t_max,
            200,
            StatisticMode::RawAlphaHat,
            TargetLaw::Normal,
            1.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tidiff::simulate::make_grid;

    #[test]
    fn horizons_are_grid_nodes() {
        let mut specs: Vec<ExperimentSpec> = experiments().into_iter().map(|(_, s)| s).collect();
        specs.push(existence_spec());
        specs.push(consistency_spec(-1.0, 0.01, &[10.0, 40.0, 160.0]));
        for s in specs {
            let grid = make_grid(&s.grid, s.model.horizon).unwrap();
            for &t in &s.horizons {
                assert!(grid.index_of(t).is_some(), "{}: {t}", s.model.name);
            }
        }
    }

    #[test]
    fn finite_horizon_grid_shape() {
        let (_, s) = experiments()
            .into_iter()
            .find(|(n, _)| *n == "remark27-singular")
            .unwrap();
        let grid = make_grid(&s.grid, s.model.horizon).unwrap();
        assert_eq!(grid.intervals(), 5120);
        assert_eq!(grid.end(), s.horizons[0]);
    }
}
