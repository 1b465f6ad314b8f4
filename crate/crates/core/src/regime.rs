//! Numerical probes of the asymptotic conditions behind each limit regime,
//! and a classifier built on them.
//!
//! Every limit here is a property of t → T, so each probe samples a quantity
//! on geometric tail nodes and reads a trend off the last `k` of them. The
//! verdicts are heuristics with explicit tolerances, and `Inconclusive` is a
//! legitimate answer.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::coeffs::{Horizon, ModelSpec};
use crate::error::{Error, Result};
use crate::quad::{profile, Profile, QuadConfig};
use crate::simulate::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeConfig {
    /// Number of trailing probes a trend is read from.
    pub k: usize,
    pub rel_tol: f64,
    pub divergence_threshold: f64,
    pub normal_threshold: f64,
    /// Minimum monotone change of log|c| over the last `k` probes for the
    /// C-limit to count as escaping to 0 or ∞.
    pub log_drift: f64,
    #[serde(skip)]
    pub quad: QuadConfig,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            k: 5,
            rel_tol: 1e-2,
            divergence_threshold: 1e3,
            normal_threshold: 1e-2,
            log_drift: 1.0,
            quad: QuadConfig::default(),
        }
    }
}

pub const MIN_TAIL_NODES: usize = 12;

/// 0 followed by 2^k, k = 0..=14 when T = ∞, or T(1 − 2^{−k}), k = 1..=20.
pub fn tail_grid(horizon: Horizon) -> TimeGrid {
    let mut nodes = vec![0.0];
    match horizon {
        Horizon::Infinite => nodes.extend((0..=14).map(|k| 2f64.powi(k))),
        Horizon::Finite(t) => nodes.extend((1..=20).map(|k| t * (1.0 - 2f64.powi(-k)))),
    }
    TimeGrid::from_nodes(nodes, horizon).expect("tail nodes increase and stay below T")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionId {
    FisherDivergence,
    CLimit,
    BIntegralDivergence,
    EnergyFinite,
    EnergyDivergent,
    NormalVanishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionProbe {
    pub id: ConditionId,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

impl ConditionProbe {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Singular { c: f64, sign: i8 },
    Cauchy,
    Normal,
    Unknown,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Singular { .. } => "Singular",
            Regime::Cauchy => "Cauchy",
            Regime::Normal => "Normal",
            Regime::Unknown => "Unknown",
        }
    }
}

/// Whether a perturbed model meets the extra requirement sign(α) = sign(C)
/// (or α = 0) of the perturbed singular limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerturbedGate {
    #[serde(rename = "satisfied")]
    Satisfied,
    #[serde(rename = "outside theorem hypotheses")]
    OutsideHypotheses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeVerdict {
    pub regime: Regime,
    pub alpha: f64,
    pub probes: Vec<ConditionProbe>,
    pub gate: Option<PerturbedGate>,
    pub notes: Vec<String>,
    pub config: RegimeConfig,
}

impl RegimeVerdict {
    pub fn probe(&self, id: ConditionId) -> Option<&ConditionProbe> {
        self.probes.iter().find(|p| p.id == id)
    }
}

impl Serialize for RegimeVerdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("regime", self.regime.name())?;
        if let Regime::Singular { c, sign } = self.regime {
            m.serialize_entry("C", &c)?;
            m.serialize_entry("sign", &sign)?;
        }
        m.serialize_entry("alpha", &self.alpha)?;
        if let Some(g) = &self.gate {
            m.serialize_entry("perturbed_gate", g)?;
        }
        m.serialize_entry("probes", &self.probes)?;
        m.serialize_entry("notes", &self.notes)?;
        m.serialize_entry("tolerances", &self.config)?;
        m.end()
    }
}

fn tail_profile(model: &ModelSpec, alpha: f64, tail: &TimeGrid, cfg: &RegimeConfig) -> Result<Profile> {
    if tail.len() < MIN_TAIL_NODES + 1 {
        return Err(Error::InvalidParameter(format!(
            "the tail needs at least {MIN_TAIL_NODES} probe nodes besides 0"
        )));
    }
    if cfg.k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    profile(&model.linear_part(), alpha, &tail.nodes, cfg.quad)
}

/// The last `k` values, or None if fewer are available or any is NaN.
fn last_k(values: &[f64], k: usize) -> Option<&[f64]> {
    let w = values.get(values.len().checked_sub(k)?..)?;
    (!w.iter().any(|v| v.is_nan())).then_some(w)
}

fn agree(w: &[f64], rel: f64) -> bool {
    let last = w[w.len() - 1];
    last.is_finite() && w.iter().all(|v| (v - last).abs() <= rel * last.abs())
}

/// Trend of a nonnegative cumulative quantity given by its logarithm.
/// Divergent when it passes the threshold, or when it keeps growing by more
/// than `rel` of itself without the increments dying out.
fn cumulative_trend(log_values: &[f64], cfg: &RegimeConfig) -> (Verdict, Option<f64>) {
    let Some(w) = last_k(log_values, cfg.k) else {
        return (Verdict::Inconclusive, None);
    };
    let last = w[w.len() - 1];
    if last > cfg.divergence_threshold.ln() {
        return (Verdict::Holds, None);
    }
    let v: Vec<f64> = w.iter().map(|l| l.exp()).collect();
    let d: Vec<f64> = v.windows(2).map(|p| p[1] - p[0]).collect();
    let growing = d.iter().zip(&v).all(|(di, vi)| *di > cfg.rel_tol * vi);
    if growing && d[d.len() - 1] >= 0.5 * d[0] {
        return (Verdict::Holds, None);
    }
    if agree(&v, cfg.rel_tol) {
        return (Verdict::Fails, Some(v[v.len() - 1]));
    }
    (Verdict::Inconclusive, None)
}

fn probe(id: ConditionId, p: &Profile, values: Vec<f64>, (verdict, limit): (Verdict, Option<f64>)) -> ConditionProbe {
    ConditionProbe {
        id,
        times: p.nodes[1..].to_vec(),
        values: values[1..].to_vec(),
        verdict,
        limit,
    }
}

fn log_c(p: &Profile, alpha: f64, k: usize) -> f64 {
    p.b[k].abs().ln() - 2.0 * p.sigma[k].ln() + 2.0 * alpha * p.int_b[k]
}

fn c_limit(p: &Profile, alpha: f64, cfg: &RegimeConfig) -> ConditionProbe {
    let values: Vec<f64> = (0..p.len())
        .map(|k| p.b[k].signum() * log_c(p, alpha, k).exp())
        .collect();
    let logs: Vec<f64> = (1..p.len()).map(|k| log_c(p, alpha, k)).collect();
    let result = match (last_k(&values[1..], cfg.k), last_k(&logs, cfg.k)) {
        (Some(w), Some(lw)) => {
            let c = w[w.len() - 1];
            let monotone = lw.windows(2).all(|p| p[1] >= p[0]) || lw.windows(2).all(|p| p[1] <= p[0]);
            if w.iter().all(|&v| v == 0.0) {
                (Verdict::Fails, Some(0.0))
            } else if agree(w, cfg.rel_tol) && c.abs() > 1e-8 {
                (Verdict::Holds, Some(c))
            } else if monotone && (lw[lw.len() - 1] - lw[0]).abs() > cfg.log_drift {
                (Verdict::Fails, None)
            } else {
                (Verdict::Inconclusive, None)
            }
        }
        _ => (Verdict::Inconclusive, None),
    };
    probe(ConditionId::CLimit, p, values, result)
}

fn b_divergence(p: &Profile, cfg: &RegimeConfig) -> ConditionProbe {
    let logs: Vec<f64> = p.int_abs_b.iter().map(|v| v.ln()).collect();
    probe(
        ConditionId::BIntegralDivergence,
        p,
        p.int_abs_b.clone(),
        cumulative_trend(&logs, cfg),
    )
}

fn energy(p: &Profile, cfg: &RegimeConfig) -> (ConditionProbe, ConditionProbe) {
    let values: Vec<f64> = p.log_energy.iter().map(|l| l.exp()).collect();
    let (divergent, limit) = cumulative_trend(&p.log_energy, cfg);
    let finite = match divergent {
        Verdict::Holds => Verdict::Fails,
        Verdict::Fails => Verdict::Holds,
        Verdict::Inconclusive => Verdict::Inconclusive,
    };
    (
        probe(ConditionId::EnergyFinite, p, values.clone(), (finite, limit)),
        probe(ConditionId::EnergyDivergent, p, values, (divergent, None)),
    )
}

fn fisher_divergence(p: &Profile, cfg: &RegimeConfig) -> ConditionProbe {
    probe(
        ConditionId::FisherDivergence,
        p,
        p.fisher(),
        cumulative_trend(&p.log_fisher, cfg),
    )
}

/// |b/σ²|·E X_t²/√I(t), which equals the vanishing ratio of the normal regime.
fn normal_ratio(p: &Profile, cfg: &RegimeConfig) -> ConditionProbe {
    let values: Vec<f64> = (0..p.len())
        .map(|k| {
            if p.b[k] == 0.0 {
                0.0
            } else {
                (p.b[k].abs().ln() - 2.0 * p.sigma[k].ln() + p.log_m2[k] - 0.5 * p.log_fisher[k]).exp()
            }
        })
        .collect();
    let result = match last_k(&values[1..], cfg.k) {
        Some(w) => {
            let decreasing = w.windows(2).all(|p| p[1] < p[0]);
            let increasing = w.windows(2).all(|p| p[1] >= p[0]);
            let last = w[w.len() - 1];
            if w.iter().all(|&v| v == 0.0) || (decreasing && last < cfg.normal_threshold) {
                (Verdict::Holds, Some(0.0))
            } else if increasing || (agree(w, cfg.rel_tol) && last >= cfg.normal_threshold) {
                (Verdict::Fails, None)
            } else {
                (Verdict::Inconclusive, None)
            }
        }
        None => (Verdict::Inconclusive, None),
    };
    probe(ConditionId::NormalVanishing, p, values, result)
}

pub fn probe_c_limit(model: &ModelSpec, alpha: f64, tail: &TimeGrid, cfg: &RegimeConfig) -> Result<ConditionProbe> {
    Ok(c_limit(&tail_profile(model, alpha, tail, cfg)?, alpha, cfg))
}

pub fn probe_b_divergence(model: &ModelSpec, tail: &TimeGrid, cfg: &RegimeConfig) -> Result<ConditionProbe> {
    Ok(b_divergence(&tail_profile(model, 0.0, tail, cfg)?, cfg))
}

/// The energy-finite probe; its `limit` is the finite limit when it holds.
pub fn probe_energy_integral(
    model: &ModelSpec,
    alpha: f64,
    tail: &TimeGrid,
    cfg: &RegimeConfig,
) -> Result<ConditionProbe> {
    Ok(energy(&tail_profile(model, alpha, tail, cfg)?, cfg).0)
}

pub fn probe_normal_condition(
    model: &ModelSpec,
    alpha: f64,
    tail: &TimeGrid,
    cfg: &RegimeConfig,
) -> Result<ConditionProbe> {
    Ok(normal_ratio(&tail_profile(model, alpha, tail, cfg)?, cfg))
}

pub fn probe_fisher_divergence(
    model: &ModelSpec,
    alpha: f64,
    tail: &TimeGrid,
    cfg: &RegimeConfig,
) -> Result<ConditionProbe> {
    Ok(fisher_divergence(&tail_profile(model, alpha, tail, cfg)?, cfg))
}

/// Runs every probe once and applies the regime rules in the order
/// Singular, Cauchy, Normal. Only the linear part of `model` is used; for a
/// perturbed model the sign gate is reported alongside.
pub fn classify(model: &ModelSpec, alpha: f64, tail: &TimeGrid, cfg: &RegimeConfig) -> Result<RegimeVerdict> {
    let p = tail_profile(model, alpha, tail, cfg)?;
    let c = c_limit(&p, alpha, cfg);
    let b = b_divergence(&p, cfg);
    let (e_fin, e_div) = energy(&p, cfg);
    let f = fisher_divergence(&p, cfg);
    let n = normal_ratio(&p, cfg);

    let mut notes = Vec::new();
    if let Some(t) = p.truncated_at {
        notes.push(format!(
            "tail truncated at t = {t}: a coefficient or integral stopped being finite"
        ));
    }
    let mut matched = Vec::new();
    if c.holds() && b.holds() {
        let cv = c.limit.expect("a holding C-limit carries its value");
        matched.push(Regime::Singular {
            c: cv,
            sign: if cv > 0.0 { 1 } else { -1 },
        });
    }
    if f.holds() && e_fin.holds() {
        matched.push(Regime::Cauchy);
    }
    if f.holds() && n.holds() {
        matched.push(Regime::Normal);
    }
    if matched.len() > 1 {
        let names: Vec<&str> = matched.iter().map(Regime::name).collect();
        return Err(Error::Contradiction(format!(
            "model '{}' with alpha = {alpha} matches {}",
            model.name,
            names.join(" and ")
        )));
    }
    let regime = matched.pop().unwrap_or(Regime::Unknown);
    if regime == Regime::Unknown {
        notes.push("no regime's conditions could be confirmed numerically".into());
    }
    if c.holds() && !(b.holds() == f.holds() && f.holds() == e_div.holds()) {
        notes.push("C-limit holds but the divergence probes disagree".into());
    }

    let gate = model.perturbation.as_ref().map(|_| match regime {
        Regime::Singular { sign, .. } if alpha == 0.0 || alpha.signum() == f64::from(sign) => PerturbedGate::Satisfied,
        _ => PerturbedGate::OutsideHypotheses,
    });
    if gate.is_some() && !matches!(regime, Regime::Singular { .. }) {
        notes.push("for perturbed models only the singular regime has a limit theorem".into());
    }
    Ok(RegimeVerdict {
        regime,
        alpha,
        probes: vec![f, c, b, e_fin, e_div, n],
        gate,
        notes,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::registry::{lookup, Overrides, NAMES};

    fn model(name: &str) -> ModelSpec {
        lookup(name, &Overrides::default()).unwrap()
    }

    fn run(name: &str, alpha: f64) -> RegimeVerdict {
        let m = model(name);
        classify(&m, alpha, &tail_grid(m.horizon), &RegimeConfig::default()).unwrap()
    }

    #[test]
    fn tail_grids() {
        let g = tail_grid(Horizon::Infinite);
        assert_eq!(g.len(), 16);
        assert_eq!(g.end(), 16384.0);
        let g = tail_grid(Horizon::Finite(2.0));
        assert_eq!(g.len(), 21);
        assert_eq!(g.nodes[1], 1.0);
        assert_eq!(g.end(), 2.0 * (1.0 - 2f64.powi(-20)));
    }

    #[test]
    fn c_limit_examples() {
        let cfg = RegimeConfig::default();
        let ou = model("ou");
        let tail = tail_grid(Horizon::Infinite);
        let p = probe_c_limit(&ou, 0.0, &tail, &cfg).unwrap();
        assert_eq!(p.verdict, Verdict::Holds);
        assert!((p.limit.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(probe_c_limit(&ou, 1.0, &tail, &cfg).unwrap().verdict, Verdict::Fails);
        let r27 = model("remark27-finiteT");
        let p = probe_c_limit(&r27, 1.0, &tail_grid(r27.horizon), &cfg).unwrap();
        assert_eq!(p.verdict, Verdict::Holds);
        assert!((p.limit.unwrap() + 0.5).abs() < 1e-4, "{:?}", p.limit);
    }

    #[test]
    fn b_divergence_examples() {
        let cfg = RegimeConfig::default();
        let tail = tail_grid(Horizon::Infinite);
        assert_eq!(
            probe_b_divergence(&model("ou"), &tail, &cfg).unwrap().verdict,
            Verdict::Holds
        );
        let p = probe_b_divergence(&model("luschgy-counterexample"), &tail, &cfg).unwrap();
        assert_eq!(p.verdict, Verdict::Fails);
        assert!((p.limit.unwrap() - 1.0).abs() < 1e-9);
        let r27 = model("remark27-finiteT");
        assert_eq!(
            probe_b_divergence(&r27, &tail_grid(r27.horizon), &cfg).unwrap().verdict,
            Verdict::Holds
        );
    }

    #[test]
    fn energy_examples() {
        let cfg = RegimeConfig::default();
        let ou = model("ou");
        let tail = tail_grid(Horizon::Infinite);
        let p = probe_energy_integral(&ou, 1.0, &tail, &cfg).unwrap();
        assert_eq!(p.verdict, Verdict::Holds);
        assert!((p.limit.unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(
            probe_energy_integral(&ou, -1.0, &tail, &cfg).unwrap().verdict,
            Verdict::Fails
        );
        assert_eq!(
            probe_energy_integral(&ou, 0.0, &tail, &cfg).unwrap().verdict,
            Verdict::Fails
        );
    }

    #[test]
    fn normal_condition_examples() {
        let cfg = RegimeConfig::default();
        let ou = model("ou");
        let tail = tail_grid(Horizon::Infinite);
        let p = probe_normal_condition(&ou, -1.0, &tail, &cfg).unwrap();
        assert_eq!(p.verdict, Verdict::Holds);
        // (1/2)/√(t/2) asymptotically
        let t = 16384.0;
        let expect = 0.5 / (t / 2.0 - 0.25f64).sqrt();
        assert!((p.values.last().unwrap() - expect).abs() < 1e-3 * expect);
        let p0 = probe_normal_condition(&ou, 0.0, &tail, &cfg).unwrap();
        assert_eq!(p0.verdict, Verdict::Fails);
        assert!((p0.values.last().unwrap() - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(
            probe_normal_condition(&ou, 1.0, &tail, &cfg).unwrap().verdict,
            Verdict::Fails
        );
    }

    #[test]
    fn classification_table() {
        assert_eq!(run("ou", -1.0).regime, Regime::Normal);
        assert_eq!(run("ou", 1.0).regime, Regime::Cauchy);
        match run("ou", 0.0).regime {
            Regime::Singular { c, sign } => {
                assert!((c - 1.0).abs() < 1e-9);
                assert_eq!(sign, 1);
            }
            r => panic!("{r:?}"),
        }
        assert_eq!(run("luschgy-counterexample", 1.0).regime, Regime::Unknown);
        match run("remark27-finiteT", 1.0).regime {
            Regime::Singular { c, sign } => {
                assert!((c + 0.5).abs() < 0.02);
                assert_eq!(sign, -1);
            }
            r => panic!("{r:?}"),
        }
        assert!(matches!(run("remark27-alpha0", 0.0).regime, Regime::Singular { .. }));
    }

    #[test]
    fn perturbed_gate() {
        let v = run("perturbed-singular", 1.0);
        assert!(matches!(v.regime, Regime::Singular { c, .. } if (c - 1.0).abs() < 1e-6));
        assert_eq!(v.gate, Some(PerturbedGate::Satisfied));
        assert!(v.notes.iter().any(|n| n.contains("truncated")));
        let m = model("perturbed-singular");
        let v = classify(&m, -1.0, &tail_grid(m.horizon), &RegimeConfig::default()).unwrap();
        assert_eq!(v.gate, Some(PerturbedGate::OutsideHypotheses));
        assert_eq!(run("ou", 1.0).gate, None);
    }

    #[test]
    fn disjoint_over_registry_sweep() {
        use rayon::prelude::*;
        let cases: Vec<(&str, f64)> = NAMES
            .iter()
            .flat_map(|n| [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0].map(|a| (*n, a)))
            .collect();
        cases.par_iter().for_each(|&(name, alpha)| {
            let m = model(name);
            {
                let v = classify(&m, alpha, &tail_grid(m.horizon), &RegimeConfig::default());
                let v = v.unwrap_or_else(|e| panic!("{name} alpha={alpha}: {e}"));
                if let Some(c) = v.probe(ConditionId::CLimit).filter(|p| p.holds()) {
                    let f = v.probe(ConditionId::FisherDivergence).unwrap().verdict;
                    assert_eq!(
                        v.probe(ConditionId::BIntegralDivergence).unwrap().verdict,
                        f,
                        "{name} {alpha} {c:?}"
                    );
                    assert_eq!(
                        v.probe(ConditionId::EnergyDivergent).unwrap().verdict,
                        f,
                        "{name} {alpha}"
                    );
                }
            }
        });
    }

    #[test]
    fn deterministic_and_exported() {
        let a = serde_json::to_string(&run("ou", 1.0)).unwrap();
        assert_eq!(a, serde_json::to_string(&run("ou", 1.0)).unwrap());
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["regime"], "Cauchy");
        assert!(v.get("C").is_none());
        // e^{2t} overflows at the far nodes and is exported as null
        let c = v["probes"]
            .as_array()
            .unwrap()
            .iter()
            .find(|p| p["id"] == "c-limit")
            .unwrap();
        assert!(c["values"].as_array().unwrap().last().unwrap().is_null());
        let s: serde_json::Value = serde_json::to_value(run("ou", 0.0)).unwrap();
        assert_eq!(s["regime"], "Singular");
        assert!((s["C"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_tails_rejected() {
        let ou = model("ou");
        let g = TimeGrid::from_nodes(vec![0.0, 1.0, 2.0], Horizon::Infinite).unwrap();
        assert!(classify(&ou, 1.0, &g, &RegimeConfig::default()).is_err());
    }
}
