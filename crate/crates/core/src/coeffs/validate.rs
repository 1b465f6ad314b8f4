use serde::Serialize;

use super::{Horizon, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::UniformStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Evidence {
    #[serde(rename = "probe grid")]
    ProbeGrid,
    #[serde(rename = "sampled evidence")]
    Sampled,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: &'static str,
    pub status: CheckStatus,
    pub evidence: Evidence,
    pub witnesses: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub probe_count: usize,
    pub probe_seed: u64,
    /// Smallest probe beyond which b is nonzero at every probe.
    pub tail_point: Option<f64>,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }
}

const MAX_WITNESSES: usize = 5;
const INFINITE_SPAN: f64 = 64.0;

fn time_probes(horizon: Horizon, n: usize, rng: &mut UniformStream) -> Vec<f64> {
    let span = match horizon {
        Horizon::Finite(t) => t * (1.0 - 2f64.powi(-10)),
        Horizon::Infinite => INFINITE_SPAN,
    };
    let mut probes: Vec<f64> = (0..n).map(|j| span * j as f64 / (n - 1) as f64).collect();
    probes.extend((0..n).map(|_| span * rng.next_f64()));
    probes.sort_by(f64::total_cmp);
    probes.dedup();
    probes
}

fn state_probe(rng: &mut UniformStream) -> f64 {
    let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
    if rng.next_f64() < 0.5 {
        sign * 5.0 * rng.next_f64()
    } else {
        sign * 10f64.powf(-3.0 + 9.0 * rng.next_f64())
    }
}

/// Probes the model hypotheses: σ > 0, b nonzero on a tail, and for the
/// perturbed model the growth and Lipschitz bounds on r. Deterministic in
/// `(spec, probe_count, seed)`.
pub fn validate_model(spec: &ModelSpec, probe_count: usize, seed: u64) -> Result<ValidationReport> {
    if probe_count < 16 {
        return Err(Error::InvalidParameter(format!(
            "validation needs at least 16 probes, got {probe_count}"
        )));
    }
    let mut rng = UniformStream::new(seed);
    let probes = time_probes(spec.horizon, probe_count, &mut rng);
    let mut checks = Vec::new();

    let bad_sigma: Vec<f64> = probes
        .iter()
        .copied()
        .filter(|&t| !matches!(spec.sigma.eval(t), Ok(s) if s > 0.0))
        .collect();
    checks.push(Check {
        id: "sigma-positive",
        status: if bad_sigma.is_empty() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        evidence: Evidence::ProbeGrid,
        detail: match bad_sigma.first() {
            None => format!("sigma > 0 at {} probes", probes.len()),
            Some(&t) => format!("sigma({t}) = {}", describe(spec.sigma.eval(t))),
        },
        witnesses: bad_sigma.into_iter().take(MAX_WITNESSES).collect(),
    });

    let mut tail_point = None;
    let mut zero_witness = None;
    for &t in probes.iter().rev() {
        match spec.b.eval(t) {
            Ok(b) if b != 0.0 => tail_point = Some(t),
            _ => {
                zero_witness = Some(t);
                break;
            }
        }
    }
    checks.push(Check {
        id: "b-nonzero-tail",
        status: if tail_point.is_some() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        evidence: Evidence::ProbeGrid,
        detail: match (tail_point, zero_witness) {
            (Some(t0), _) => format!("b != 0 at every probe t >= {t0}"),
            (None, Some(t)) => format!("b({t}) = {}", describe(spec.b.eval(t))),
            (None, None) => "no probes".into(),
        },
        witnesses: tail_point.or(zero_witness).into_iter().collect(),
    });

    if let Some(p) = &spec.perturbation {
        let mut xs = vec![0.0, -1.0, 1.0];
        xs.extend((0..probe_count).map(|_| state_probe(&mut rng)));
        let mut worst: f64 = 0.0;
        let mut bad = Vec::new();
        for &x in &xs {
            let bound = p.growth * (1.0 + x.abs().powf(p.gamma));
            match p.r.eval(x) {
                Ok(r) => {
                    if bound > 0.0 {
                        worst = worst.max(r.abs() / bound);
                    }
                    if r.abs() > bound * (1.0 + 1e-12) {
                        bad.push(x);
                    }
                }
                Err(_) => bad.push(x),
            }
        }
        checks.push(Check {
            id: "r-growth",
            status: if bad.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            evidence: Evidence::Sampled,
            detail: format!(
                "max |r(x)|/(L(1+|x|^gamma)) = {worst:.6} over {} points (L = {}, gamma = {})",
                xs.len(),
                p.growth,
                p.gamma
            ),
            witnesses: bad.into_iter().take(MAX_WITNESSES).collect(),
        });

        let mut worst: f64 = 0.0;
        let mut bad = Vec::new();
        for _ in 0..probe_count {
            let x = state_probe(&mut rng);
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let y = x + sign * 10f64.powf(-6.0 + 7.0 * rng.next_f64());
            match (p.r.eval(x), p.r.eval(y)) {
                (Ok(rx), Ok(ry)) => {
                    let q = (rx - ry).abs() / (x - y).abs();
                    worst = worst.max(q);
                    if q > p.lipschitz * (1.0 + 1e-9) + 1e-12 {
                        bad.push(x);
                        bad.push(y);
                    }
                }
                _ => {
                    bad.push(x);
                    bad.push(y);
                }
            }
        }
        checks.push(Check {
            id: "r-lipschitz",
            status: if bad.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            evidence: Evidence::Sampled,
            detail: format!("max quotient {worst:.6} over {probe_count} pairs (M = {})", p.lipschitz),
            witnesses: bad.into_iter().take(2 * MAX_WITNESSES).collect(),
        });
    }

    checks.push(Check {
        id: "continuity",
        status: CheckStatus::Unverified,
        evidence: Evidence::None,
        detail: "continuity of b and sigma on [0, T) is assumed, not checked".into(),
        witnesses: Vec::new(),
    });

    Ok(ValidationReport {
        model: spec.name.clone(),
        probe_count,
        probe_seed: seed,
        tail_point,
        checks,
    })
}

fn describe(v: std::result::Result<f64, super::CoeffError>) -> String {
    match v {
        Ok(x) => x.to_string(),
        Err(e) => e.to_string(),
    }
}
