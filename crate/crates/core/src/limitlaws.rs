//! Reference limit laws, Kolmogorov–Smirnov distances and the exit
//! probability of Brownian motion from [−1, 1].
//!
//! The Dickey–Fuller type law ζ = ∫₀¹W dW / ∫₀¹W² ds has no closed-form CDF,
//! so it is represented by a sorted, checksummed sample ([`ZetaOracle`]).
//! The oracle stores raw ζ; scale factors ±1/√2 are applied when comparing.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{fmt17, write_atomic};
use crate::rng::{NormalStream, SeedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaScale {
    Unit,
    PlusInvSqrt2,
    MinusInvSqrt2,
}

impl ZetaScale {
    pub fn factor(self) -> f64 {
        match self {
            ZetaScale::Unit => 1.0,
            ZetaScale::PlusInvSqrt2 => FRAC_1_SQRT_2,
            ZetaScale::MinusInvSqrt2 => -FRAC_1_SQRT_2,
        }
    }

    /// sign(C)/√2.
    pub fn for_sign(c: f64) -> ZetaScale {
        if c < 0.0 {
            ZetaScale::MinusInvSqrt2
        } else {
            ZetaScale::PlusInvSqrt2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LimitLaw {
    Normal,
    Cauchy,
    DickeyFuller { scale: ZetaScale, oracle: Arc<ZetaOracle> },
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn cauchy_cdf(x: f64) -> f64 {
    0.5 + x.atan() / PI
}

pub fn cdf(law: &LimitLaw, x: f64) -> f64 {
    match law {
        LimitLaw::Normal => normal_cdf(x),
        LimitLaw::Cauchy => cauchy_cdf(x),
        LimitLaw::DickeyFuller { scale, oracle } => {
            let c = scale.factor();
            if c > 0.0 {
                oracle.ecdf(x / c)
            } else {
                1.0 - oracle.ecdf(x / c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub n: usize,
    /// Size of the reference sample for two-sample tests.
    pub m: Option<usize>,
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("KS statistic of an empty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidParameter(
            "KS statistic of a sample containing NaN".into(),
        ));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// sup |ECDF − F| over the sample points.
pub fn ks_one_sample(samples: &[f64], f: impl Fn(f64) -> f64) -> Result<KsResult> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let fx = f(x);
        d = d.max((i + 1) as f64 / n - fx).max(fx - i as f64 / n);
    }
    Ok(KsResult { d, n: s.len(), m: None })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult {
        d,
        n: a.len(),
        m: Some(b.len()),
    })
}

/// One-sample against the analytic laws, two-sample against the scaled ζ
/// oracle.
pub fn ks_statistic(samples: &[f64], law: &LimitLaw) -> Result<KsResult> {
    match law {
        LimitLaw::Normal => ks_one_sample(samples, normal_cdf),
        LimitLaw::Cauchy => ks_one_sample(samples, cauchy_cdf),
        LimitLaw::DickeyFuller { scale, oracle } => {
            let c = scale.factor();
            let reference: Vec<f64> = oracle.samples.iter().map(|z| c * z).collect();
            ks_two_sample(samples, &reference)
        }
    }
}

fn zeta_path(seed: SeedSpec, steps: usize, coarse: bool) -> (f64, Option<f64>) {
    let mut s = NormalStream::new(seed);
    let h = 1.0 / steps as f64;
    let sd = h.sqrt();
    let (mut w, mut sum_sq, mut sum_sq_coarse) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..steps {
        sum_sq += w * w;
        if j % 2 == 0 {
            sum_sq_coarse += w * w;
        }
        w += sd * s.next_normal();
    }
    let num = 0.5 * (w * w - 1.0);
    (num / (sum_sq * h), coarse.then(|| num / (sum_sq_coarse * 2.0 * h)))
}

fn check_zeta_args(n: usize, steps: usize) -> Result<()> {
    if n == 0 || steps < 256 {
        return Err(Error::InvalidParameter(format!(
            "zeta sampling needs n >= 1 and steps >= 256, got n = {n}, steps = {steps}"
        )));
    }
    Ok(())
}

/// n draws of ζ, sample i from stream i. The numerator uses the Itô identity
/// ∫W dW = (W₁² − 1)/2; the denominator is a left-endpoint Riemann sum.
pub fn sample_zeta(n: usize, steps: usize, base_seed: u64) -> Result<Vec<f64>> {
    check_zeta_args(n, steps)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| zeta_path(SeedSpec::new(base_seed, i), steps, false).0)
        .collect())
}

/// Like [`sample_zeta`], plus the value from the same paths observed on every
/// other node (steps/2 intervals).
pub fn sample_zeta_with_coarse(n: usize, steps: usize, base_seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_zeta_args(n, steps)?;
    if !steps.is_multiple_of(2) {
        return Err(Error::InvalidParameter("steps must be even".into()));
    }
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (fine, coarse) = zeta_path(SeedSpec::new(base_seed, i), steps, true);
            (fine, coarse.unwrap())
        })
        .unzip())
}

pub const ORACLE_FORMAT_VERSION: u32 = 1;
const ORACLE_MAGIC: &str = "# tidiff zeta oracle";

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaOracle {
    pub n: usize,
    pub steps: usize,
    pub base_seed: u64,
    /// Sorted raw ζ values.
    pub samples: Vec<f64>,
}

fn values_block(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 24);
    for v in samples {
        out.push_str(&fmt17(*v));
        out.push('\n');
    }
    out
}

impl ZetaOracle {
    pub fn generate(n: usize, steps: usize, base_seed: u64) -> Result<ZetaOracle> {
        Ok(ZetaOracle::from_samples(
            sample_zeta(n, steps, base_seed)?,
            steps,
            base_seed,
        ))
    }

    pub fn from_samples(mut samples: Vec<f64>, steps: usize, base_seed: u64) -> ZetaOracle {
        samples.sort_by(f64::total_cmp);
        ZetaOracle {
            n: samples.len(),
            steps,
            base_seed,
            samples,
        }
    }

    /// SHA-256 of the value lines.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(values_block(&self.samples).as_bytes()))
    }

    pub fn to_csv(&self) -> String {
        let values = values_block(&self.samples);
        let mut out = String::new();
        let _ = writeln!(out, "{ORACLE_MAGIC}");
        let _ = writeln!(out, "format_version,{ORACLE_FORMAT_VERSION}");
        let _ = writeln!(out, "n,{}", self.n);
        let _ = writeln!(out, "steps,{}", self.steps);
        let _ = writeln!(out, "base_seed,{}", self.base_seed);
        let _ = writeln!(out, "sha256,{}", hex::encode(Sha256::digest(values.as_bytes())));
        out.push_str("value\n");
        out.push_str(&values);
        out
    }

    pub fn from_csv(text: &str) -> Result<ZetaOracle> {
        let bad = |what: &str| Error::Oracle(format!("malformed oracle file: {what}"));
        let mut lines = text.split_inclusive('\n');
        if lines.next().map(str::trim_end) != Some(ORACLE_MAGIC) {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(key))?.trim_end();
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(','))
                .map(str::to_string)
                .ok_or_else(|| bad(key))
        };
        let version: u32 = field("format_version")?.parse().map_err(|_| bad("format_version"))?;
        if version != ORACLE_FORMAT_VERSION {
            return Err(Error::Oracle(format!("unsupported oracle format version {version}")));
        }
        let n: usize = field("n")?.parse().map_err(|_| bad("n"))?;
        let steps: usize = field("steps")?.parse().map_err(|_| bad("steps"))?;
        let base_seed: u64 = field("base_seed")?.parse().map_err(|_| bad("base_seed"))?;
        let sha = field("sha256")?;
        if lines.next().map(str::trim_end) != Some("value") {
            return Err(bad("missing value column"));
        }
        let body: String = lines.collect();
        if hex::encode(Sha256::digest(body.as_bytes())) != sha {
            return Err(Error::Oracle("checksum mismatch; the oracle file is corrupted".into()));
        }
        let samples = body
            .lines()
            .map(|l| l.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<f64>>>()?;
        if samples.len() != n {
            return Err(bad("value count differs from n"));
        }
        if samples.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("values are not sorted"));
        }
        Ok(ZetaOracle {
            n,
            steps,
            base_seed,
            samples,
        })
    }

    pub fn write(&self, path: &FsPath) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &FsPath) -> Result<ZetaOracle> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ZetaOracle::from_csv(&text)
    }

    /// Empirical CDF, linear between consecutive order statistics.
    pub fn ecdf(&self, x: f64) -> f64 {
        let s = &self.samples;
        let n = s.len();
        if n == 0 || x < s[0] {
            return 0.0;
        }
        if x >= s[n - 1] {
            return 1.0;
        }
        // s[k-1] <= x < s[k]
        let k = s.partition_point(|&v| v <= x);
        let (lo, hi) = (s[k - 1], s[k]);
        let frac = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        (k as f64 + frac) / n as f64
    }
}

const SERIES_TERM_FLOOR: f64 = 1e-12;

/// P(sup_{s≤t} |B_s| < 1) = Σ_k (−1)^k 4/((2k+1)π) exp(−(2k+1)²π²t/8).
pub fn boundary_crossing_prob(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 0u64.. {
        let m = (2 * k + 1) as f64;
        let term = 4.0 / (m * PI) * (-m * m * PI * PI * t / 8.0).exp();
        sum += if k % 2 == 0 { term } else { -term };
        if term < SERIES_TERM_FLOOR {
            break;
        }
    }
    Ok(sum.clamp(0.0, 1.0))
}
