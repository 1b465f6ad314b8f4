//! Seeded, parallel Monte Carlo experiments.
//!
//! Replicate r always draws from stream r of the base seed, and results are
//! gathered in replicate order, so the output is identical for any number of
//! worker threads.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{validate_model, ModelSpec};
use crate::error::{Error, Result};
use crate::estimate::{
    fisher_linear, fisher_perturbed_mc, mle_linear_with, mle_perturbed_with, normalized_error, FisherMethod,
    FisherSeries, StatisticMode, FISHER_STREAM_OFFSET,
};
use crate::io::fmt17;
use crate::limitlaws::{boundary_crossing_prob, ks_statistic, KsResult, LimitLaw, ZetaOracle, ZetaScale};
use crate::rng::SeedSpec;
use crate::simulate::{
    make_grid, simulate_perturbed_em_with, GridCoefficients, GridSpec, LinearTransitions, Path, TimeGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Exact Gaussian transitions and the linear MLE.
    Linear,
    /// Euler–Maruyama paths of the perturbed equation and the perturbed MLE.
    Perturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetLaw {
    Normal,
    Cauchy,
    Zeta(ZetaScale),
}

pub const MIN_KS_REPLICATES: usize = 100;
pub const DEFAULT_FISHER_PATHS: usize = 500;
const VALIDATION_PROBES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    pub horizons: Vec<f64>,
    pub n_replicates: usize,
    pub grid: GridSpec,
    /// Simpson panels per interval for the exact transitions.
    pub panels: usize,
    pub mode: StatisticMode,
    pub target: Option<TargetLaw>,
    pub seed: u64,
    pub estimator: Estimator,
    /// Paths in the Fisher pre-pass of perturbed fisher-sqrt runs.
    pub fisher_paths: usize,
    pub ks_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; None uses the global pool.
    pub threads: Option<usize>,
    /// Required when the target is a ζ law.
    pub oracle: Option<Arc<ZetaOracle>>,
    /// Progress lines on standard error.
    pub progress: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub p01: f64,
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonResult {
    pub t: f64,
    pub n_defined: usize,
    pub n_undefined: usize,
    pub ks: Option<KsResult>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
    pub quantiles: Option<Quantiles>,
    /// Statistic per replicate in replicate order, None where undefined.
    #[serde(skip)]
    pub samples: Vec<Option<f64>>,
}

impl HorizonResult {
    pub fn defined_samples(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedsUsed {
    pub base_seed: u64,
    /// Replicates use streams [0, n_replicates).
    pub replicate_streams: [u64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher_streams: Option<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub fisher_method: Option<FisherMethod>,
    pub seeds: SeedsUsed,
    /// Replicates whose path left the safe range before the last horizon.
    pub n_truncated: usize,
    pub horizons: Vec<HorizonResult>,
}

impl ExperimentResult {
    /// Pretty JSON with a fixed key order. Non-finite numbers become null.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    /// `t,replicate,value`, value empty where the statistic is undefined.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("t,replicate,value\n");
        for h in &self.horizons {
            for (r, v) in h.samples.iter().enumerate() {
                let v = v.map(fmt17).unwrap_or_default();
                let _ = writeln!(out, "{},{r},{v}", fmt17(h.t));
            }
        }
        out
    }

    /// True when every horizon with a tolerance passed.
    pub fn passed(&self) -> bool {
        self.horizons.iter().all(|h| h.pass != Some(false))
    }
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantiles(samples: &[f64]) -> Option<Quantiles> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&s, p);
    Some(Quantiles {
        p01: q(0.01),
        p05: q(0.05),
        p25: q(0.25),
        p50: q(0.5),
        p75: q(0.75),
        p95: q(0.95),
        p99: q(0.99),
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParameter("threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn progress(on: bool, msg: impl FnOnce() -> String) {
    if on {
        eprintln!("[tidiff] {}", msg());
    }
}

/// Grid, node index of every horizon, and the path sampler shared by the
/// replicates of one experiment.
struct Plan {
    grid: Arc<TimeGrid>,
    indices: Vec<usize>,
    coeffs: GridCoefficients,
    transitions: Option<LinearTransitions>,
}

impl ExperimentSpec {
    fn check(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::InvalidParameter("at least one horizon is needed".into()));
        }
        for &t in &self.horizons {
            if !(t > 0.0 && t < self.model.horizon.value()) {
                return Err(Error::InvalidParameter(format!(
                    "horizon t = {t} must lie in (0, T = {})",
                    self.model.horizon
                )));
            }
        }
        if self.n_replicates == 0 {
            return Err(Error::InvalidParameter("n_replicates must be positive".into()));
        }
        if self.target.is_some() && self.n_replicates < MIN_KS_REPLICATES {
            return Err(Error::InvalidParameter(format!(
                "KS runs need at least {MIN_KS_REPLICATES} replicates, got {}",
                self.n_replicates
            )));
        }
        if self.panels == 0 {
            return Err(Error::InvalidParameter("panels must be positive".into()));
        }
        match (self.estimator, self.model.is_linear()) {
            (Estimator::Linear, false) => Err(Error::InvalidParameter(format!(
                "model '{}' has a perturbation; use the perturbed estimator",
                self.model.name
            ))),
            (Estimator::Perturbed, true) => Err(Error::InvalidParameter(format!(
                "model '{}' has no perturbation r; use the linear estimator",
                self.model.name
            ))),
            _ => Ok(()),
        }
    }

    fn plan(&self) -> Result<Plan> {
        self.check()?;
        let report = validate_model(&self.model, VALIDATION_PROBES, self.seed)?;
        if !report.passed() {
            let failed: Vec<String> = report
                .checks
                .iter()
                .filter(|c| c.status == crate::coeffs::CheckStatus::Fail)
                .map(|c| format!("{} ({})", c.id, c.detail))
                .collect();
            return Err(Error::Precondition(format!(
                "model '{}' failed validation: {}",
                self.model.name,
                failed.join("; ")
            )));
        }
        let grid = Arc::new(make_grid(&self.grid, self.model.horizon)?);
        let indices = self
            .horizons
            .iter()
            .map(|&t| {
                grid.index_of(t)
                    .ok_or_else(|| Error::Misaligned(format!("horizon t = {t} is not a node of the grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        let coeffs = GridCoefficients::new(&self.model, &grid)?;
        let transitions = match self.estimator {
            Estimator::Linear => Some(LinearTransitions::new(&self.model, &grid, self.panels)?),
            Estimator::Perturbed => None,
        };
        Ok(Plan {
            grid,
            indices,
            coeffs,
            transitions,
        })
    }

    fn path(&self, plan: &Plan, r: usize) -> Result<Path> {
        let seed = SeedSpec::new(self.seed, r as u64);
        match &plan.transitions {
            Some(tr) => Ok(tr.sample(seed)),
            None => simulate_perturbed_em_with(&self.model, &plan.grid, &plan.coeffs, seed),
        }
    }

    fn fisher(&self, plan: &Plan) -> Result<Option<FisherSeries>> {
        if !self.mode.needs_fisher() {
            return Ok(None);
        }
        Ok(Some(match self.estimator {
            Estimator::Linear => fisher_linear(&self.model, &plan.grid)?,
            Estimator::Perturbed => fisher_perturbed_mc(
                &self.model,
                &plan.grid,
                self.fisher_paths,
                SeedSpec::new(self.seed, FISHER_STREAM_OFFSET),
            )?,
        }))
    }

    fn law(&self, opts: &RunOptions) -> Result<Option<LimitLaw>> {
        Ok(match self.target {
            None => None,
            Some(TargetLaw::Normal) => Some(LimitLaw::Normal),
            Some(TargetLaw::Cauchy) => Some(LimitLaw::Cauchy),
            Some(TargetLaw::Zeta(scale)) => {
                let oracle = opts.oracle.clone().ok_or_else(|| {
                    Error::Oracle(
                        "a zeta target needs an oracle file; create one with `tidiff zeta-oracle --out <file>` and pass it with --oracle".into(),
                    )
                })?;
                Some(LimitLaw::DickeyFuller { scale, oracle })
            }
        })
    }
}

/// Statistic values at the horizon nodes for every replicate, in order, and
/// whether each replicate's path was truncated before the last horizon.
fn replicate_statistics(
    spec: &ExperimentSpec,
    plan: &Plan,
    fisher: Option<&FisherSeries>,
) -> Result<Vec<(Vec<Option<f64>>, bool)>> {
    let last = *plan.indices.iter().max().expect("horizons are nonempty");
    (0..spec.n_replicates)
        .into_par_iter()
        .map(|r| {
            let path = spec.path(plan, r)?;
            let series = match spec.estimator {
                Estimator::Linear => mle_linear_with(&path, &spec.model, &plan.coeffs)?,
                Estimator::Perturbed => mle_perturbed_with(&path, &spec.model, &plan.coeffs)?,
            };
            let stat = normalized_error(&series, fisher, &spec.model, spec.mode)?;
            let values = plan.indices.iter().map(|&k| stat.get(k).copied().flatten()).collect();
            Ok((values, path.values.len() <= last))
        })
        .collect()
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<(ExperimentResult, Duration)> {
    let start = Instant::now();
    let law = spec.law(opts)?;
    let result = with_threads(opts.threads, || -> Result<ExperimentResult> {
        let plan = spec.plan()?;
        progress(opts.progress, || {
            format!(
                "{}: {} replicates on {} nodes",
                spec.model.name,
                spec.n_replicates,
                plan.grid.len()
            )
        });
        let fisher = spec.fisher(&plan)?;
        if let Some(f) = fisher.as_ref().filter(|f| f.stderr.is_some()) {
            progress(opts.progress, || format!("Fisher pre-pass done ({:?})", f.method));
        }
        let stats = replicate_statistics(spec, &plan, fisher.as_ref())?;
        let n_truncated = stats.iter().filter(|(_, tr)| *tr).count();
        let mut horizons = Vec::with_capacity(spec.horizons.len());
        for (j, &t) in spec.horizons.iter().enumerate() {
            let samples: Vec<Option<f64>> = stats.iter().map(|(v, _)| v[j]).collect();
            let defined: Vec<f64> = samples.iter().flatten().copied().collect();
            let ks = match (&law, defined.is_empty()) {
                (Some(l), false) => Some(ks_statistic(&defined, l)?),
                _ => None,
            };
            let tolerance = ks.and(spec.ks_tolerance);
            horizons.push(HorizonResult {
                t,
                n_defined: defined.len(),
                n_undefined: samples.len() - defined.len(),
                pass: ks.zip(tolerance).map(|(k, tol)| k.d < tol),
                quantiles: quantiles(&defined),
                ks,
                tolerance,
                samples,
            });
            progress(opts.progress, || match ks {
                Some(k) => format!("t = {t}: KS D = {:.4}", k.d),
                None => format!("t = {t}: {} defined", defined.len()),
            });
        }
        let fisher_streams = fisher
            .as_ref()
            .filter(|f| f.stderr.is_some())
            .map(|_| [FISHER_STREAM_OFFSET, FISHER_STREAM_OFFSET + spec.fisher_paths as u64]);
        Ok(ExperimentResult {
            spec: spec.clone(),
            fisher_method: fisher.map(|f| f.method),
            seeds: SeedsUsed {
                base_seed: spec.seed,
                replicate_streams: [0, spec.n_replicates as u64],
                fisher_streams,
            },
            n_truncated,
            horizons,
        })
    })??;
    Ok((result, start.elapsed()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyResult {
    pub horizons: Vec<f64>,
    pub median_abs_error: Vec<f64>,
    pub n_undefined: Vec<usize>,
    /// Medians strictly decrease along the ladder.
    pub decreasing: bool,
}

/// Median |α̂_t − α| per horizon from per-horizon estimates (None where
/// undefined, which counts as a failure of the decrease).
pub fn consistency_from_estimates(horizons: &[f64], estimates: &[Vec<Option<f64>>], alpha: f64) -> ConsistencyResult {
    let mut medians = Vec::with_capacity(horizons.len());
    let mut n_undefined = Vec::with_capacity(horizons.len());
    for est in estimates {
        let mut err: Vec<f64> = est.iter().flatten().map(|a| (a - alpha).abs()).collect();
        n_undefined.push(est.len() - err.len());
        err.sort_by(f64::total_cmp);
        medians.push(if err.is_empty() {
            f64::NAN
        } else {
            quantile_sorted(&err, 0.5)
        });
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]) && medians.iter().all(|m| m.is_finite());
    ConsistencyResult {
        horizons: horizons.to_vec(),
        median_abs_error: medians,
        n_undefined,
        decreasing,
    }
}

/// Runs `spec` with the raw estimator and reports the median absolute error
/// along its horizon ladder.
pub fn consistency_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ConsistencyResult> {
    let spec = ExperimentSpec {
        mode: StatisticMode::RawAlphaHat,
        target: None,
        ks_tolerance: None,
        ..spec.clone()
    };
    let (res, _) = run_experiment(&spec, opts)?;
    let est: Vec<Vec<Option<f64>>> = res.horizons.iter().map(|h| h.samples.clone()).collect();
    Ok(consistency_from_estimates(&spec.horizons, &est, spec.model.alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistencePoint {
    pub t: f64,
    /// Fraction of replicates whose estimator denominator is still 0 at t.
    pub estimate: f64,
    pub stderr: f64,
    /// P(sup_{s≤t}|B_s| < 1).
    pub boundary_prob: f64,
    /// estimate ≥ boundary_prob/2 − 3·stderr.
    pub above_lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceResult {
    pub n: usize,
    pub points: Vec<ExistencePoint>,
    /// Estimates do not increase with t.
    pub monotone: bool,
}

/// Probability that the perturbed estimator is still undefined at each t,
/// i.e. the path has not left the zero set of a(·) by then. `spec` supplies
/// the model, grid, replicate count and seed; its mode and target are
/// ignored.
pub fn existence_probability_experiment(
    spec: &ExperimentSpec,
    times: &[f64],
    opts: &RunOptions,
) -> Result<ExistenceResult> {
    if spec.estimator != Estimator::Perturbed {
        return Err(Error::InvalidParameter(
            "the existence experiment needs the perturbed estimator".into(),
        ));
    }
    let spec = ExperimentSpec {
        horizons: times.to_vec(),
        mode: StatisticMode::RawAlphaHat,
        target: None,
        ks_tolerance: None,
        ..spec.clone()
    };
    let n = spec.n_replicates;
    let (res, _) = run_experiment(&spec, opts)?;
    let mut points = Vec::with_capacity(times.len());
    for h in &res.horizons {
        let p = h.n_undefined as f64 / n as f64;
        let stderr = (p * (1.0 - p) / n as f64).sqrt();
        let boundary_prob = boundary_crossing_prob(h.t)?;
        points.push(ExistencePoint {
            t: h.t,
            estimate: p,
            stderr,
            boundary_prob,
            above_lower_bound: p >= boundary_prob / 2.0 - 3.0 * stderr,
        });
    }
    let mut order: Vec<&ExistencePoint> = points.iter().collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));
    let monotone = order.windows(2).all(|w| w[1].estimate <= w[0].estimate);
    Ok(ExistenceResult { n, points, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::registry::{lookup, Overrides};

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

    fn spec(alpha: f64, horizons: Vec<f64>, n: usize, h: f64) -> ExperimentSpec {
        let t_max = horizons.iter().cloned().fold(0.0, f64::max);
        ExperimentSpec {
            model: ou(alpha),
            horizons,
            n_replicates: n,
            grid: GridSpec::Uniform { h, t_max },
            panels: 8,
            mode: StatisticMode::RandomNormalization,
            target: Some(TargetLaw::Normal),
            seed: 11,
            estimator: Estimator::Linear,
            fisher_paths: DEFAULT_FISHER_PATHS,
            ks_tolerance: Some(0.1),
        }
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn counts_add_up_and_json_is_thread_independent() {
        let s = spec(-1.0, vec![1.0, 4.0], 200, 0.01);
        let one = RunOptions {
            threads: Some(1),
            ..RunOptions::default()
        };
        let four = RunOptions {
            threads: Some(4),
            ..RunOptions::default()
        };
        let (a, _) = run_experiment(&s, &one).unwrap();
        let (b, _) = run_experiment(&s, &four).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.samples_csv(), b.samples_csv());
        for h in &a.horizons {
            assert_eq!(h.n_defined + h.n_undefined, 200);
            assert_eq!(h.n_undefined, 0);
            assert!(h.ks.is_some() && h.pass.is_some());
        }
        assert!(!a.to_json().contains("runtime"));
        assert_eq!(a.samples_csv().lines().count(), 1 + 2 * 200);
    }

    #[test]
    fn rejects_bad_specs() {
        let opts = RunOptions::default();
        let mut s = spec(1.0, vec![1.0], 50, 0.01);
        assert!(matches!(run_experiment(&s, &opts), Err(Error::InvalidParameter(_))));
        s.n_replicates = 100;
        s.horizons = vec![0.995];
        assert!(matches!(run_experiment(&s, &opts), Err(Error::Misaligned(_))));
        s.horizons = vec![1.0];
        s.target = Some(TargetLaw::Zeta(ZetaScale::Unit));
        assert!(matches!(run_experiment(&s, &opts), Err(Error::Oracle(_))));
        s.target = None;
        s.estimator = Estimator::Perturbed;
        assert!(run_experiment(&s, &opts).is_err());
    }

    #[test]
    fn synthetic_consistency() {
        let est = vec![vec![Some(0.3); 10], vec![Some(0.3); 10]];
        let r = consistency_from_estimates(&[1.0, 2.0], &est, 0.3);
        assert_eq!(r.median_abs_error, vec![0.0, 0.0]);
        assert!(!r.decreasing);
        let est = vec![
            vec![Some(1.5), Some(0.2)],
            vec![Some(1.1), Some(0.9)],
            vec![None, Some(1.0)],
        ];
        let r = consistency_from_estimates(&[1.0, 2.0, 3.0], &est, 1.0);
        for (m, e) in r.median_abs_error.iter().zip([0.65, 0.1, 0.0]) {
            assert!((m - e).abs() < 1e-12);
        }
        assert_eq!(r.n_undefined, vec![0, 0, 1]);
        assert!(r.decreasing);
    }

    #[test]
    fn consistency_ladder_for_stable_ou() {
        let s = spec(-1.0, vec![10.0, 40.0, 160.0], 200, 0.02);
        let r = consistency_experiment(&s, &RunOptions::default()).unwrap();
        assert!(r.decreasing, "{r:?}");
        // asymptotic sd √(2|α|/t)
        for (t, m) in r.horizons.iter().zip(&r.median_abs_error) {
            let sd = (2.0 / t).sqrt();
            assert!(*m > 0.3 * sd && *m < 1.5 * sd, "t = {t}: {m}");
        }
    }
}
