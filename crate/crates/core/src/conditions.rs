//! Drift and non-explosion certificates.
//!
//! * [`DriftCertificate`]: `Σ_y w(y) q(y|x,a) <= ρ w(x)` with `0 < ρ < α`, and
//!   `c_i⁻(x,a) <= L w(x)`.
//! * [`LyapunovCertificate`]: a second drift function `w'` with exhausting
//!   sets `V_m` such that `w'/w` grows off `V_m`.
//! * [`Condition5Certificate`]: a drift function `w̃'` dominating the jump
//!   intensity, convertible into a Lyapunov certificate with `w' = w̃' + 1`.
//!
//! On a finite model the limits in the Lyapunov conditions degenerate; the
//! checks record the monotone trend of `m ↦ min_{x∉V_m} w'(x)/w(x)` instead.

use crate::model::CtmdpModel;
use crate::transform::build_w_transform;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Absolute slack allowed on every drift inequality.
pub const DRIFT_TOL: f64 = 1e-9;
/// Floor applied to an attained `ρ` so certificates stay strictly positive.
pub const RHO_MIN: f64 = 1e-6;
/// Floor applied to an attained `L`.
pub const L_MIN: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ConditionError {
    #[error("drift violation: attained rho {rho} >= alpha {alpha} (worst at state {state}, action {action})")]
    DriftViolation {
        rho: f64,
        alpha: f64,
        state: usize,
        action: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub w: Vec<f64>,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl DriftCertificate {
    /// Re-verifies the certificate against a model.
    pub fn validate(&self, m: &CtmdpModel) -> Result<(), ConditionError> {
        let opts = Condition1Options {
            rho: Some(self.rho),
            l: Some(self.l),
            ..Default::default()
        };
        check_condition1(m, &self.w, &opts).map(|_| ())
    }

    /// The same certificate for `κ·w`: `ρ` unchanged, `L` scaled by `1/κ`.
    pub fn scaled(&self, kappa: f64) -> Self {
        Self {
            w: self.w.iter().map(|v| v * kappa).collect(),
            rho: self.rho,
            l: self.l / kappa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition1Options {
    /// Requested `ρ`; validated rather than tightened.
    pub rho: Option<f64>,
    /// Requested `L`; validated rather than tightened.
    pub l: Option<f64>,
    pub rho_min: f64,
    pub l_min: f64,
}

impl Default for Condition1Options {
    fn default() -> Self {
        Self {
            rho: None,
            l: None,
            rho_min: RHO_MIN,
            l_min: L_MIN,
        }
    }
}

/// Largest `Σ_y w(y) q(y|x,a) / w(x)` over the graph, with its location.
pub fn attained_drift(m: &CtmdpModel, w: &[f64]) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (x, k) in m.graph() {
        let r = m.drift(x, k, w) / w[x];
        if r > best.0 {
            best = (r, x, k);
        }
    }
    best
}

/// Largest `c_i⁻(x,a) / w(x)` over the graph and all cost tables.
pub fn attained_lower_bound(m: &CtmdpModel, w: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..m.n_costs() {
        for (x, k) in m.graph() {
            let c = m.cost(i, x, k);
            if c < 0.0 {
                best = best.max(-c / w[x]);
            }
        }
    }
    best
}

/// Verifies the drift condition for `w` and returns the tightest certificate
/// (or validates the requested constants).
pub fn check_condition1(
    m: &CtmdpModel,
    w: &[f64],
    opts: &Condition1Options,
) -> Result<DriftCertificate, ConditionError> {
    if w.len() != m.n_states() {
        return Err(ConditionError::Domain(format!(
            "w has {} entries for {} states",
            w.len(),
            m.n_states()
        )));
    }
    if let Some(x) = w.iter().position(|v| !(v.is_finite() && *v >= 1.0)) {
        return Err(ConditionError::Domain(format!("w({x}) = {} < 1", w[x])));
    }
    let alpha = m.alpha();
    let (attained, wx, wk) = attained_drift(m, w);
    let rho = match opts.rho {
        Some(r) => {
            if !(r > 0.0) {
                return Err(ConditionError::InvalidCertificate(format!("rho = {r} must be > 0")));
            }
            for (x, k) in m.graph() {
                if m.drift(x, k, w) > r * w[x] + DRIFT_TOL {
                    return Err(ConditionError::DriftViolation {
                        rho: attained,
                        alpha: r.min(alpha),
                        state: x,
                        action: m.action_index(x, k),
                    });
                }
            }
            r
        }
        None => attained.max(opts.rho_min),
    };
    if rho >= alpha {
        return Err(ConditionError::DriftViolation {
            rho,
            alpha,
            state: wx,
            action: m.action_index(wx, wk),
        });
    }
    let attained_l = attained_lower_bound(m, w);
    let l = match opts.l {
        Some(l) => {
            if !(l > 0.0) || attained_l > l + DRIFT_TOL {
                return Err(ConditionError::InvalidCertificate(format!(
                    "L = {l} does not bound the negative cost parts (attained {attained_l})"
                )));
            }
            l
        }
        None => attained_l.max(opts.l_min),
    };
    Ok(DriftCertificate { w: w.to_vec(), rho, l })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckViolation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub message: String,
}

/// Outcome of a certificate check. Violations are entries, not failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub violations: Vec<CheckViolation>,
    pub metrics: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl CheckReport {
    fn new() -> Self {
        Self {
            passed: true,
            ..Default::default()
        }
    }

    fn fail(&mut self, state: Option<usize>, action: Option<usize>, message: String) {
        self.passed = false;
        self.violations.push(CheckViolation { state, action, message });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub w_prime: Vec<f64>,
    pub rho_prime: f64,
    /// Exhausting sets `V_1 ⊆ V_2 ⊆ …` as state indices.
    pub v_sets: Vec<Vec<usize>>,
}

impl LyapunovCertificate {
    /// `w' = w`, `ρ' = ρ`, `V_1 = S`; valid for any drift certificate.
    pub fn from_drift(cert: &DriftCertificate) -> Self {
        Self {
            w_prime: cert.w.clone(),
            rho_prime: cert.rho,
            v_sets: vec![(0..cert.w.len()).collect()],
        }
    }
}

/// `m ↦ min_{x∉V_m} w'(x)/w(x)`; `+inf` once `V_m = S`.
pub fn ratio_profile(w: &[f64], w_prime: &[f64], v_sets: &[Vec<usize>]) -> Vec<f64> {
    v_sets
        .iter()
        .map(|v| {
            let mut inside = vec![false; w.len()];
            for &x in v {
                if x < inside.len() {
                    inside[x] = true;
                }
            }
            (0..w.len())
                .filter(|&x| !inside[x])
                .map(|x| w_prime[x] / w[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn check_condition2(m: &CtmdpModel, cert: &DriftCertificate, lyap: &LyapunovCertificate) -> CheckReport {
    let mut report = CheckReport::new();
    let n = m.n_states();
    if lyap.w_prime.len() != n || cert.w.len() != n {
        report.fail(None, None, format!("w' has {} entries for {n} states", lyap.w_prime.len()));
        return report;
    }
    if let Some(x) = lyap.w_prime.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        report.fail(Some(x), None, format!("w'({x}) = {} is not positive", lyap.w_prime[x]));
    }
    if !(lyap.rho_prime > 0.0 && lyap.rho_prime.is_finite()) {
        report.fail(None, None, format!("rho' = {} must be in (0, inf)", lyap.rho_prime));
    }

    // exhaustion: nested, covering S
    let mut sup_qbar = Vec::with_capacity(lyap.v_sets.len());
    let mut prev: Vec<bool> = vec![false; n];
    for (m_idx, v) in lyap.v_sets.iter().enumerate() {
        let mut cur = vec![false; n];
        for &x in v {
            if x >= n {
                report.fail(None, None, format!("V_{} references unknown state {x}", m_idx + 1));
            } else {
                cur[x] = true;
            }
        }
        if let Some(x) = (0..n).find(|&x| prev[x] && !cur[x]) {
            report.fail(Some(x), None, format!("V_{} drops state {x}: sets not nondecreasing", m_idx + 1));
        }
        sup_qbar.push((0..n).filter(|&x| cur[x]).map(|x| m.max_exit_rate(x)).fold(0.0, f64::max));
        prev = cur;
    }
    if lyap.v_sets.is_empty() || prev.iter().any(|&inside| !inside) {
        report.fail(None, None, "the sets V_m do not exhaust S".into());
    }

    let mut attained = f64::NEG_INFINITY;
    for (x, k) in m.graph() {
        let d = m.drift(x, k, &lyap.w_prime);
        attained = attained.max(d / lyap.w_prime[x]);
        if d > lyap.rho_prime * lyap.w_prime[x] + DRIFT_TOL {
            report.fail(
                Some(x),
                Some(m.action_index(x, k)),
                format!(
                    "w' drift {d} exceeds rho' w'(x) = {} at state {x}, action {}",
                    lyap.rho_prime * lyap.w_prime[x],
                    m.action_index(x, k)
                ),
            );
        }
    }

    let profile = ratio_profile(&cert.w, &lyap.w_prime, &lyap.v_sets);
    if profile.windows(2).any(|p| p[1] < p[0]) {
        report.fail(None, None, "min_{x not in V_m} w'/w is not nondecreasing in m".into());
    }
    report.metrics.insert("rho_prime".into(), lyap.rho_prime);
    report.metrics.insert("rho_prime_attained".into(), attained.max(RHO_MIN));
    report.series.insert("ratio_profile".into(), profile);
    report.series.insert("sup_qbar".into(), sup_qbar);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition5Certificate {
    pub w_tilde_prime: Vec<f64>,
    #[serde(rename = "L_tilde_prime")]
    pub l_tilde_prime: f64,
    pub rho_tilde_prime: f64,
    #[serde(rename = "L_tilde")]
    pub l_tilde: f64,
}

impl Condition5Certificate {
    /// Tightest constants for a given `w̃'`, floored at [`RHO_MIN`].
    pub fn tightest(m: &CtmdpModel, cert: &DriftCertificate, w_tilde_prime: Vec<f64>) -> Self {
        let (l1, rho, l2) = condition5_constants(m, cert, &w_tilde_prime);
        Self {
            w_tilde_prime,
            l_tilde_prime: l1.max(RHO_MIN),
            rho_tilde_prime: rho.max(RHO_MIN),
            l_tilde: l2.max(RHO_MIN),
        }
    }
}

fn condition5_constants(m: &CtmdpModel, cert: &DriftCertificate, wt: &[f64]) -> (f64, f64, f64) {
    let mut l1 = 0.0_f64;
    let mut l2 = 0.0_f64;
    for x in 0..m.n_states() {
        let qbar = m.max_exit_rate(x);
        l1 = l1.max(qbar / wt[x]);
        l2 = l2.max((qbar + 1.0) * cert.w[x] / wt[x]);
    }
    let rho = m
        .graph()
        .map(|(x, k)| m.drift(x, k, wt) / wt[x])
        .fold(f64::NEG_INFINITY, f64::max);
    (l1, rho, l2)
}

pub fn check_condition5(m: &CtmdpModel, cert: &DriftCertificate, c5: &Condition5Certificate) -> CheckReport {
    let mut report = CheckReport::new();
    let n = m.n_states();
    let wt = &c5.w_tilde_prime;
    if wt.len() != n {
        report.fail(None, None, format!("w~' has {} entries for {n} states", wt.len()));
        return report;
    }
    if let Some(x) = wt.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        report.fail(Some(x), None, format!("w~'({x}) = {} is not positive", wt[x]));
        return report;
    }
    for (name, v) in [
        ("L~'", c5.l_tilde_prime),
        ("rho~'", c5.rho_tilde_prime),
        ("L~", c5.l_tilde),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            report.fail(None, None, format!("{name} = {v} must be in (0, inf)"));
        }
    }
    for x in 0..n {
        let qbar = m.max_exit_rate(x);
        if qbar > c5.l_tilde_prime * wt[x] + DRIFT_TOL {
            report.fail(Some(x), None, format!("qbar_{x} = {qbar} exceeds L~' w~'(x) = {}", c5.l_tilde_prime * wt[x]));
        }
        let lhs = (qbar + 1.0) * cert.w[x];
        if lhs > c5.l_tilde * wt[x] + DRIFT_TOL {
            report.fail(Some(x), None, format!("(qbar+1) w = {lhs} exceeds L~ w~'(x) = {} at state {x}", c5.l_tilde * wt[x]));
        }
    }
    for (x, k) in m.graph() {
        let d = m.drift(x, k, wt);
        if d > c5.rho_tilde_prime * wt[x] + DRIFT_TOL {
            report.fail(
                Some(x),
                Some(m.action_index(x, k)),
                format!("w~' drift {d} exceeds rho~' w~'(x) at state {x}, action {}", m.action_index(x, k)),
            );
        }
    }
    let (l1, rho, l2) = condition5_constants(m, cert, wt);
    report.metrics.insert("L_tilde_prime_attained".into(), l1);
    report.metrics.insert("rho_tilde_prime_attained".into(), rho);
    report.metrics.insert("L_tilde_attained".into(), l2);
    report
}

/// Cap on the number of exhaustion sets generated from a Condition 5 certificate.
pub const MAX_EXHAUSTION_SETS: usize = 100_000;

/// `w' = w̃' + 1`, `ρ' = ρ̃'`, `V_m = {x : (w̃'(x) + 1)/w(x) <= m}`.
///
/// Sets are generated for `m = 1, 2, …` up to the first `m` with `V_m = S`.
pub fn condition5_to_condition2(
    c5: &Condition5Certificate,
    cert: &DriftCertificate,
) -> Result<LyapunovCertificate, ConditionError> {
    let wt = &c5.w_tilde_prime;
    if wt.len() != cert.w.len() {
        return Err(ConditionError::InvalidCertificate(format!(
            "w~' has {} entries, w has {}",
            wt.len(),
            cert.w.len()
        )));
    }
    if wt.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(c5.rho_tilde_prime > 0.0 && c5.rho_tilde_prime.is_finite()) {
        return Err(ConditionError::InvalidCertificate("w~' and rho~' must be positive and finite".into()));
    }
    let w_prime: Vec<f64> = wt.iter().map(|v| v + 1.0).collect();
    let ratios: Vec<f64> = w_prime.iter().zip(&cert.w).map(|(a, b)| a / b).collect();
    let top = ratios.iter().copied().fold(1.0, f64::max).ceil();
    if top > MAX_EXHAUSTION_SETS as f64 {
        return Err(ConditionError::InvalidCertificate(format!(
            "ratio (w~'+1)/w reaches {top}; more than {MAX_EXHAUSTION_SETS} exhaustion sets"
        )));
    }
    let v_sets = (1..=top as usize)
        .map(|m| {
            (0..ratios.len())
                .filter(|&x| ratios[x] <= m as f64)
                .collect()
        })
        .collect();
    Ok(LyapunovCertificate {
        w_prime,
        rho_prime: c5.rho_tilde_prime,
        v_sets,
    })
}

/// Checks `Σ_{y∈S} (w'(y)/w(y)) q^w(y|x,a) <= (ρ' − ρ) w'(x)/w(x)` on the
/// transformed generator (the cemetery carries weight 0). Passing certifies
/// that the transformed process does not explode.
pub fn check_transformed_drift(m: &CtmdpModel, cert: &DriftCertificate, lyap: &LyapunovCertificate) -> CheckReport {
    let mut report = CheckReport::new();
    let n = m.n_states();
    if lyap.w_prime.len() != n {
        report.fail(None, None, format!("w' has {} entries for {n} states", lyap.w_prime.len()));
        return report;
    }
    let tm = match build_w_transform(m, cert) {
        Ok(tm) => tm,
        Err(e) => {
            report.fail(None, None, format!("transform failed: {e}"));
            return report;
        }
    };
    let weight = |y: usize| if y < n { lyap.w_prime[y] / cert.w[y] } else { 0.0 };
    let mut worst = f64::NEG_INFINITY;
    for (x, k) in m.graph() {
        let lhs: f64 = tm.rate_row(x, k).iter().map(|&(y, q)| weight(y) * q).sum::<f64>()
            - tm.exit_rate(x, k) * weight(x);
        let rhs = (lyap.rho_prime - cert.rho) * weight(x);
        worst = worst.max(lhs - rhs);
        if lhs > rhs + DRIFT_TOL {
            report.fail(
                Some(x),
                Some(m.action_index(x, k)),
                format!("transformed drift {lhs} exceeds (rho'-rho) w'/w = {rhs} at state {x}, action {}", m.action_index(x, k)),
            );
        }
    }
    report.metrics.insert("max_excess".into(), worst);
    report
}

/// Certificate block as written in JSON (inline in a model file or via `--cert`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition5: Option<Condition5File>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovFile {
    pub w_prime: Vec<f64>,
    pub rho_prime: f64,
    /// Exhaustion sets by state label.
    #[serde(rename = "V")]
    pub v: Vec<Vec<crate::model::Label>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition5File {
    pub w_tilde_prime: Vec<f64>,
    #[serde(rename = "L_tilde_prime", default, skip_serializing_if = "Option::is_none")]
    pub l_tilde_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tilde_prime: Option<f64>,
    #[serde(rename = "L_tilde", default, skip_serializing_if = "Option::is_none")]
    pub l_tilde: Option<f64>,
}

/// Certificates resolved against a model.
#[derive(Debug, Clone)]
pub struct ResolvedCertificates {
    pub drift: DriftCertificate,
    pub lyapunov: Option<LyapunovCertificate>,
    pub condition5: Option<Condition5Certificate>,
}

impl CertificateFile {
    /// Checks the drift condition (tightening absent constants) and resolves
    /// the optional blocks. A missing `w` means `w ≡ 1`.
    pub fn resolve(&self, m: &CtmdpModel) -> Result<ResolvedCertificates, ConditionError> {
        let w = self.w.clone().unwrap_or_else(|| vec![1.0; m.n_states()]);
        let drift = check_condition1(
            m,
            &w,
            &Condition1Options {
                rho: self.rho,
                l: self.l,
                ..Default::default()
            },
        )?;
        let lyapunov = match &self.lyapunov {
            Some(lf) => {
                let mut v_sets = Vec::with_capacity(lf.v.len());
                for set in &lf.v {
                    let mut idx = Vec::with_capacity(set.len());
                    for label in set {
                        let s = label.to_string();
                        idx.push(m.state_index(&s).ok_or_else(|| {
                            ConditionError::InvalidCertificate(format!("unknown state label {s} in V"))
                        })?);
                    }
                    v_sets.push(idx);
                }
                Some(LyapunovCertificate {
                    w_prime: lf.w_prime.clone(),
                    rho_prime: lf.rho_prime,
                    v_sets,
                })
            }
            None => None,
        };
        let condition5 = match &self.condition5 {
            Some(cf) => {
                if cf.w_tilde_prime.len() != m.n_states() {
                    return Err(ConditionError::InvalidCertificate("w_tilde_prime length mismatch".into()));
                }
                let tight = Condition5Certificate::tightest(m, &drift, cf.w_tilde_prime.clone());
                Some(Condition5Certificate {
                    w_tilde_prime: cf.w_tilde_prime.clone(),
                    l_tilde_prime: cf.l_tilde_prime.unwrap_or(tight.l_tilde_prime),
                    rho_tilde_prime: cf.rho_tilde_prime.unwrap_or(tight.rho_tilde_prime),
                    l_tilde: cf.l_tilde.unwrap_or(tight.l_tilde),
                })
            }
            None => None,
        };
        Ok(ResolvedCertificates {
            drift,
            lyapunov,
            condition5,
        })
    }
}
