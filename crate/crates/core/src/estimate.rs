//! Maximum-likelihood estimation of α from a discretized path.
//!
//! ```text
//! α̂_t = Σ b_i V_i/σ_i² (Z_{i+1} − Z_i)  /  Σ b_i² V_i²/σ_i² Δt_i
//! ```
//!
//! with left-endpoint (Itô) sums, Z the observed process and V = Z for the
//! linear model or V = a(Z) for the perturbed one. α̂ is undefined while the
//! denominator is zero.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::ModelSpec;
use crate::error::{Error, Result};
use crate::quad::{profile, QuadConfig};
use crate::rng::SeedSpec;
use crate::simulate::{simulate_perturbed_em_with, GridCoefficients, Path, PathKind, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct MleSeries {
    pub grid: Arc<TimeGrid>,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub alpha_hat: Vec<Option<f64>>,
}

impl MleSeries {
    pub fn len(&self) -> usize {
        self.numerator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerator.is_empty()
    }

    pub fn defined(&self) -> Vec<bool> {
        self.alpha_hat.iter().map(Option::is_some).collect()
    }
}

fn mle_sums(path: &Path, coeffs: &GridCoefficients, weight: impl Fn(f64) -> Result<f64>) -> Result<MleSeries> {
    let grid = &path.grid;
    if coeffs.b.len() != grid.len() {
        return Err(Error::Misaligned("coefficients and path use different grids".into()));
    }
    let n = path.values.len();
    let mut numerator = Vec::with_capacity(n);
    let mut denominator = Vec::with_capacity(n);
    let mut alpha_hat = Vec::with_capacity(n);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    numerator.push(num);
    denominator.push(den);
    alpha_hat.push(None);
    for i in 0..n - 1 {
        let v = weight(path.values[i])?;
        let s2 = coeffs.sigma[i] * coeffs.sigma[i];
        let bv = coeffs.b[i] * v;
        num += bv / s2 * (path.values[i + 1] - path.values[i]);
        den += bv * bv / s2 * grid.dt(i);
        numerator.push(num);
        denominator.push(den);
        alpha_hat.push((den > 0.0).then(|| num / den));
    }
    Ok(MleSeries {
        grid: Arc::clone(grid),
        numerator,
        denominator,
        alpha_hat,
    })
}

pub fn mle_linear(path: &Path, model: &ModelSpec) -> Result<MleSeries> {
    let coeffs = GridCoefficients::new(model, &path.grid)?;
    mle_linear_with(path, model, &coeffs)
}

pub fn mle_linear_with(path: &Path, model: &ModelSpec, coeffs: &GridCoefficients) -> Result<MleSeries> {
    if !model.is_linear() {
        return Err(Error::Precondition("mle_linear needs a linear model".into()));
    }
    if path.kind == PathKind::PerturbedEm {
        return Err(Error::Precondition("mle_linear needs a linear or Wiener path".into()));
    }
    mle_sums(path, coeffs, Ok)
}

pub fn mle_perturbed(path: &Path, model: &ModelSpec) -> Result<MleSeries> {
    let coeffs = GridCoefficients::new(model, &path.grid)?;
    mle_perturbed_with(path, model, &coeffs)
}

/// The perturbed estimator. Any path kind is accepted so that the two
/// estimators can be compared on the same path.
pub fn mle_perturbed_with(path: &Path, model: &ModelSpec, coeffs: &GridCoefficients) -> Result<MleSeries> {
    if model.perturbation.is_none() {
        return Err(Error::Precondition("mle_perturbed needs a model with r".into()));
    }
    mle_sums(path, coeffs, |y| model.a_at(y))
}

fn check_time(model: &ModelSpec, t: f64) -> Result<()> {
    if !(t >= 0.0 && t < model.horizon.value()) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} must lie in [0, T = {})",
            model.horizon
        )));
    }
    Ok(())
}

/// E X_t² = e^{2αB(t)} ∫₀ᵗ σ(u)² e^{−2αB(u)} du.
pub fn second_moment_linear(model: &ModelSpec, t: f64) -> Result<f64> {
    check_time(model, t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let p = profile(model, model.alpha, &[0.0, t], QuadConfig::default())?;
    if p.truncated_at.is_some() {
        return Err(Error::NonFinite {
            what: "second moment".into(),
            last_safe: 0.0,
        });
    }
    Ok(p.log_m2[1].exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FisherMethod {
    DeterministicQuadrature,
    MonteCarlo { n_paths: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherSeries {
    pub grid: Arc<TimeGrid>,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub method: FisherMethod,
}

/// I(t) = ∫₀ᵗ b²/σ² E X_s² ds at every grid node.
pub fn fisher_linear(model: &ModelSpec, grid: &Arc<TimeGrid>) -> Result<FisherSeries> {
    if !model.is_linear() {
        return Err(Error::Precondition("fisher_linear needs a linear model".into()));
    }
    let p = profile(model, model.alpha, &grid.nodes, QuadConfig::default())?;
    if let Some(t) = p.truncated_at {
        return Err(Error::NonFinite {
            what: format!("Fisher information before t = {t}"),
            last_safe: *p.nodes.last().unwrap(),
        });
    }
    Ok(FisherSeries {
        grid: Arc::clone(grid),
        values: p.fisher(),
        stderr: None,
        method: FisherMethod::DeterministicQuadrature,
    })
}

/// Stream offset that keeps Fisher pre-pass paths apart from experiment paths.
pub const FISHER_STREAM_OFFSET: u64 = 1 << 40;
const CHUNK: usize = 32;

/// Per-node running mean and sum of squared deviations.
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Moments {
        Moments {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        let n = self.count + other.count;
        if other.count == 0.0 {
            return;
        }
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * other.count / n;
            self.m2[k] += other.m2[k] + d * d * self.count * other.count / n;
        }
        self.count = n;
    }
}

/// I_Y(t) = ∫₀ᵗ b²/σ² E a(Y_s)² ds estimated from `n_paths` Euler–Maruyama
/// paths on streams `seed.stream + p`. The result does not depend on the
/// number of worker threads.
pub fn fisher_perturbed_mc(
    model: &ModelSpec,
    grid: &Arc<TimeGrid>,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<FisherSeries> {
    if model.perturbation.is_none() {
        return Err(Error::Precondition("fisher_perturbed_mc needs a model with r".into()));
    }
    if n_paths < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 paths, got {n_paths}"
        )));
    }
    let coeffs = GridCoefficients::new(model, grid)?;
    let w: Vec<f64> = coeffs
        .b
        .iter()
        .zip(&coeffs.sigma)
        .map(|(b, s)| b * b / (s * s))
        .collect();
    let len = grid.len();
    let chunks: Vec<Result<Moments>> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(len);
            let mut cum = vec![0.0; len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let path = simulate_perturbed_em_with(model, grid, &coeffs, seed.with_stream(seed.stream + p as u64))?;
                if let Some(tr) = &path.truncation {
                    return Err(Error::NonFinite {
                        what: format!("Fisher pre-pass path {p}: {}", tr.reason),
                        last_safe: tr.t,
                    });
                }
                let mut prev = w[0] * model.a_at(path.values[0])?.powi(2);
                for i in 0..len - 1 {
                    let next = w[i + 1] * model.a_at(path.values[i + 1])?.powi(2);
                    cum[i + 1] = cum[i] + 0.5 * grid.dt(i) * (prev + next);
                    prev = next;
                }
                acc.push(&cum);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::new(len);
    for c in chunks {
        total.merge(&c?);
    }
    let n = total.count;
    let stderr = total.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
    Ok(FisherSeries {
        grid: Arc::clone(grid),
        values: total.mean,
        stderr: Some(stderr),
        method: FisherMethod::MonteCarlo { n_paths },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticMode {
    /// √I(t)·(α̂_t − α)
    FisherSqrt,
    /// √(Σ b²V²/σ² Δt)·(α̂_t − α)
    RandomNormalization,
    /// t·α̂_t
    TTimesAlphaHat,
    /// α̂_t
    RawAlphaHat,
}

impl StatisticMode {
    pub fn needs_fisher(self) -> bool {
        self == StatisticMode::FisherSqrt
    }
}

pub fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> bool {
    Arc::ptr_eq(a, b) || a.nodes == b.nodes
}

/// The statistic of `mode` at every node of the series, None where α̂ is
/// undefined. α is the model's true parameter.
pub fn normalized_error(
    series: &MleSeries,
    fisher: Option<&FisherSeries>,
    model: &ModelSpec,
    mode: StatisticMode,
) -> Result<Vec<Option<f64>>> {
    let alpha = model.alpha;
    let fisher = match (mode.needs_fisher(), fisher) {
        (false, _) => None,
        (true, None) => return Err(Error::InvalidParameter("fisher-sqrt needs a Fisher series".into())),
        (true, Some(f)) => {
            if !same_grid(&f.grid, &series.grid) || f.values.len() < series.len() {
                return Err(Error::Misaligned("Fisher series and MLE series differ".into()));
            }
            Some(f)
        }
    };
    Ok(series
        .alpha_hat
        .iter()
        .enumerate()
        .map(|(k, a)| {
            a.map(|a| match mode {
                StatisticMode::FisherSqrt => fisher.unwrap().values[k].sqrt() * (a - alpha),
                StatisticMode::RandomNormalization => series.denominator[k].sqrt() * (a - alpha),
                StatisticMode::TTimesAlphaHat => series.grid.nodes[k] * a,
                StatisticMode::RawAlphaHat => a,
            })
        })
        .collect())
}

/// Δ_t = α ∫₀ᵗ r(Y_s) b(s) exp(α ∫ₛᵗ b) ds along the path, accumulated as
/// Δ_{k+1} = e^{α b_k Δt}(Δ_k + α b_k r(Y_k) Δt).
pub fn delta_path(y: &Path, model: &ModelSpec) -> Result<Vec<f64>> {
    let coeffs = GridCoefficients::new(model, &y.grid)?;
    let alpha = model.alpha;
    let mut out = Vec::with_capacity(y.values.len());
    let mut d = 0.0;
    out.push(d);
    for i in 0..y.values.len() - 1 {
        let dt = y.grid.dt(i);
        let r = model.a_at(y.values[i])? - y.values[i];
        let ab = alpha * coeffs.b[i];
        d = (ab * dt).exp() * (d + ab * r * dt);
        out.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::registry::{lookup, Overrides};
    use crate::coeffs::{CoeffFn, Horizon};
    use crate::simulate::{
        euler_maruyama, make_grid, simulate_linear_exact, simulate_perturbed_em, simulate_wiener, wiener_increments,
        GridSpec,
    };
    use proptest::prelude::*;

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

    fn uniform(h: f64, t_max: f64) -> Arc<TimeGrid> {
        Arc::new(make_grid(&GridSpec::Uniform { h, t_max }, Horizon::Infinite).unwrap())
    }

    fn sine_r(model: ModelSpec) -> ModelSpec {
        model
            .with_perturbation(CoeffFn::state("0.5*sin(x)").unwrap(), 0.5, 0.0, 0.5)
            .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_path_is_undefined() {
        let g = uniform(0.1, 1.0);
        let mut p = simulate_wiener(&g, SeedSpec::new(0, 0));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let s = mle_linear(&p, &ou(0.0)).unwrap();
        assert!(s.denominator.iter().all(|&d| d == 0.0));
        assert!(s.alpha_hat.iter().all(Option::is_none));
    }

    #[test]
    fn consistent_at_long_horizon() {
        let g = uniform(0.01, 200.0);
        let m = ou(-1.0);
        let p = simulate_linear_exact(&m, &g, SeedSpec::new(2024, 0)).unwrap();
        let a = mle_linear(&p, &m).unwrap().alpha_hat.last().unwrap().unwrap();
        assert!((a + 1.0).abs() < 0.2, "alpha_hat = {a}");
    }

    #[test]
    fn ito_orientation() {
        let g = uniform(2f64.powi(-14), 1.0);
        let w = simulate_wiener(&g, SeedSpec::new(77, 0));
        let s = mle_linear(&w, &ou(0.0)).unwrap();
        let n = g.intervals();
        let w1 = w.values[n];
        let left = s.numerator[n];
        assert!((left - (w1 * w1 - 1.0) / 2.0).abs() < 0.02);
        let mid: f64 = (0..n)
            .map(|i| 0.5 * (w.values[i] + w.values[i + 1]) * (w.values[i + 1] - w.values[i]))
            .sum();
        assert!((mid - left - 0.5).abs() < 0.02);
        // t·α̂ from the sums against the Itô-identity numerator over the same
        // denominator; the two numerators differ by (1 − Σ(ΔW)²)/2
        let t_alpha = s.alpha_hat[n].unwrap();
        let exact = ((w1 * w1 - 1.0) / 2.0) / s.denominator[n];
        assert!(
            (t_alpha - exact).abs() * s.denominator[n] < 1e-2,
            "{t_alpha} vs {exact}"
        );
    }

    #[test]
    fn perturbed_estimator_with_zero_r_matches_linear() {
        let g = uniform(0.01, 5.0);
        let lin = ou(1.0);
        let zero = lin
            .clone()
            .with_perturbation(CoeffFn::state("0").unwrap(), 0.0, 0.0, 0.0)
            .unwrap();
        let p = simulate_linear_exact(&lin, &g, SeedSpec::new(4, 4)).unwrap();
        assert_eq!(mle_linear(&p, &lin).unwrap(), mle_perturbed(&p, &zero).unwrap());
        assert!(mle_perturbed(&p, &lin).is_err());
    }

    #[test]
    fn second_moment_closed_forms() {
        assert!(
            rel(
                second_moment_linear(&ou(1.0), 1.0).unwrap(),
                (1f64.exp().powi(2) - 1.0) / 2.0
            ) < 1e-6
        );
        assert!(rel(second_moment_linear(&ou(0.0), 3.5).unwrap(), 3.5) < 1e-14);
        assert_eq!(second_moment_linear(&ou(1.0), 0.0).unwrap(), 0.0);
        assert!(second_moment_linear(&ou(1.0), -1.0).is_err());
    }

    #[test]
    fn fisher_closed_forms() {
        let g = uniform(0.25, 10.0);
        for (alpha, f) in [
            (0.0, Box::new(|t: f64| t * t / 2.0) as Box<dyn Fn(f64) -> f64>),
            (1.0, Box::new(|t: f64| ((2.0 * t).exp() - 1.0) / 4.0 - t / 2.0)),
        ] {
            let s = fisher_linear(&ou(alpha), &g).unwrap();
            for (k, &t) in g.nodes.iter().enumerate().skip(1) {
                assert!(rel(s.values[k], f(t)) < 1e-6, "alpha {alpha} t {t}");
            }
        }
        let two = Arc::new(TimeGrid::from_nodes(vec![0.0, 2.0], Horizon::Infinite).unwrap());
        assert!(rel(fisher_linear(&ou(0.0), &two).unwrap().values[1], 2.0) < 1e-6);
        let one = Arc::new(TimeGrid::from_nodes(vec![0.0, 1.0], Horizon::Infinite).unwrap());
        assert!(rel(fisher_linear(&ou(1.0), &one).unwrap().values[1], 1.0972640247326626) < 1e-6);
        let single = Arc::new(TimeGrid::from_nodes(vec![0.0], Horizon::Infinite).unwrap());
        assert_eq!(fisher_linear(&ou(1.0), &single).unwrap().values, vec![0.0]);
    }

    #[test]
    fn normalized_modes() {
        let g = uniform(0.01, 1.0);
        let m = ou(0.0);
        let w = simulate_wiener(&g, SeedSpec::new(8, 0));
        let s = mle_linear(&w, &m).unwrap();
        let f = fisher_linear(&m, &g).unwrap();
        let fs = normalized_error(&s, Some(&f), &m, StatisticMode::FisherSqrt).unwrap();
        let rn = normalized_error(&s, None, &m, StatisticMode::RandomNormalization).unwrap();
        for k in 2..s.len() {
            let a = s.alpha_hat[k].unwrap();
            let t = g.nodes[k];
            assert!((fs[k].unwrap() - t / 2f64.sqrt() * a).abs() < 1e-6 * (1.0 + a.abs()));
            let identity = s.numerator[k] / s.denominator[k].sqrt();
            assert!((rn[k].unwrap() - identity).abs() <= 1e-12 * identity.abs().max(1.0));
        }
        assert!(normalized_error(&s, None, &m, StatisticMode::FisherSqrt).is_err());
        let other = fisher_linear(&m, &uniform(0.02, 1.0)).unwrap();
        assert!(matches!(
            normalized_error(&s, Some(&other), &m, StatisticMode::FisherSqrt),
            Err(Error::Misaligned(_))
        ));
        let exact = MleSeries {
            alpha_hat: s.alpha_hat.iter().map(|a| a.map(|_| 0.0)).collect(),
            ..s.clone()
        };
        let z = normalized_error(&exact, Some(&f), &m, StatisticMode::FisherSqrt).unwrap();
        assert!(z.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_vanishes_without_r_or_alpha() {
        let g = uniform(0.01, 2.0);
        let zero = ou(1.0)
            .with_perturbation(CoeffFn::state("0").unwrap(), 0.0, 0.0, 0.0)
            .unwrap();
        let y = simulate_perturbed_em(&zero, &g, SeedSpec::new(1, 1)).unwrap();
        assert!(delta_path(&y, &zero).unwrap().iter().all(|&d| d == 0.0));
        let still = sine_r(ou(0.0));
        let y = simulate_perturbed_em(&still, &g, SeedSpec::new(1, 1)).unwrap();
        assert!(delta_path(&y, &still).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn delta_decomposition_converges() {
        let model = sine_r(ou(1.0));
        let linear = ou(1.0);
        let mut errs = Vec::new();
        for h in [2f64.powi(-6), 2f64.powi(-8), 2f64.powi(-10)] {
            let g = uniform(h, 1.0);
            let coeffs = GridCoefficients::new(&model, &g).unwrap();
            let mut worst: f64 = 0.0;
            for s in 0..20 {
                let inc = wiener_increments(&g, SeedSpec::new(31, s));
                let y = euler_maruyama(&model, &g, &coeffs, inc.clone()).unwrap();
                let x = euler_maruyama(&linear, &g, &coeffs, inc).unwrap();
                let d = delta_path(&y, &model).unwrap();
                for (k, dk) in d.iter().enumerate() {
                    worst = worst.max((y.values[k] - x.values[k] - dk).abs());
                }
            }
            errs.push(worst);
        }
        // first order: a 16-fold refinement should cut the error about 16-fold
        assert!(errs[0] / errs[1] > 2.0 && errs[1] / errs[2] > 2.0, "{errs:?}");
        assert!(errs[0] / errs[2] > 8.0, "{errs:?}");
    }

    #[test]
    fn fisher_mc_with_zero_r_matches_quadrature() {
        let g = uniform(2f64.powi(-8), 2.0);
        let lin = ou(-1.0);
        let zero = lin
            .clone()
            .with_perturbation(CoeffFn::state("0").unwrap(), 0.0, 0.0, 0.0)
            .unwrap();
        let mc = fisher_perturbed_mc(&zero, &g, 2000, SeedSpec::new(5, 0)).unwrap();
        let exact = fisher_linear(&lin, &g).unwrap();
        let se = mc.stderr.as_ref().unwrap();
        for k in (32..g.len()).step_by(64) {
            assert!(
                (mc.values[k] - exact.values[k]).abs() < 3.0 * se[k],
                "t = {}",
                g.nodes[k]
            );
        }
        assert!(fisher_perturbed_mc(&zero, &g, 99, SeedSpec::new(5, 0)).is_err());
    }

    #[test]
    fn fisher_mc_dietz_kutoyants_below_linear() {
        let g = uniform(2f64.powi(-8), 1.0);
        let dk = lookup("dietz-kutoyants", &Overrides::default()).unwrap();
        let mc = fisher_perturbed_mc(&dk, &g, 400, SeedSpec::new(6, 0)).unwrap();
        let lin = fisher_linear(&dk.linear_part(), &g).unwrap();
        assert!(mc.values.last().unwrap() < lin.values.last().unwrap());
    }

    #[test]
    fn fisher_mc_stderr_scales() {
        let g = uniform(2f64.powi(-6), 1.0);
        let m = sine_r(ou(1.0));
        let a = fisher_perturbed_mc(&m, &g, 400, SeedSpec::new(9, 0)).unwrap();
        let b = fisher_perturbed_mc(&m, &g, 800, SeedSpec::new(9, 0)).unwrap();
        let ratio = a.stderr.unwrap().last().unwrap() / b.stderr.unwrap().last().unwrap();
        assert!((1.2..1.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fisher_mc_thread_independent() {
        let g = uniform(2f64.powi(-6), 1.0);
        let m = sine_r(ou(1.0));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fisher_perturbed_mc(&m, &g, 200, SeedSpec::new(3, 0)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    proptest! {
        #[test]
        fn denominator_nondecreasing(seed in 0u64..1000, alpha in -2.0f64..2.0) {
            let g = uniform(0.05, 3.0);
            let m = ou(alpha);
            let p = simulate_linear_exact(&m, &g, SeedSpec::new(seed, 0)).unwrap();
            let s = mle_linear(&p, &m).unwrap();
            prop_assert!(s.denominator.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(s.denominator[0] == 0.0);
            for (d, a) in s.denominator.iter().zip(&s.alpha_hat) {
                prop_assert_eq!(*d > 0.0, a.is_some());
            }
        }
    }
}
