//! Cross-module verification battery for one model and certificate.

use crate::conditions::{check_transformed_drift, DriftCertificate, LyapunovCertificate};
use crate::model::CtmdpModel;
use crate::policy::{DeterministicPolicy, MarkovPolicy, StationaryPolicy};
use crate::reduction::{build_dtmdp, DtmdpModel};
use crate::resolvent::{ctmdp_value, resolvent_apply};
use crate::simulator::{estimate_discounted_cost, McOptions};
use crate::solver::{
    enumerate_bruteforce, evaluate_deterministic, extract_greedy_policy, policy_evaluation, solve_constrained_lp,
    value_iteration, SolverError, ViOptions,
};
use crate::transform::{build_w_transform, verify_lemma3};
use crate::transition::{feller_series, kc_residual, uniformization, FellerOptions, QFunction};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub horizon: Option<f64>,
    pub n_max: usize,
    pub threads: Option<usize>,
    /// Largest number of deterministic policies checked one by one.
    pub policy_cap: u128,
    /// Largest state space on which the dense transition checks run.
    pub transition_cap: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            seed: 0,
            n_traj: 4000,
            horizon: None,
            n_max: 64,
            threads: None,
            policy_cap: 100_000,
            transition_cap: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

struct Battery {
    checks: Vec<CheckOutcome>,
}

impl Battery {
    fn record(&mut self, name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> bool {
        let passed = value <= tolerance;
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed,
            value,
            tolerance,
            detail: detail.into(),
        });
        passed
    }

    fn fail(&mut self, name: &str, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tolerance: 0.0,
            detail: detail.into(),
        });
    }

    fn skip(&mut self, name: &str, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed: true,
            value: 0.0,
            tolerance: 0.0,
            detail: format!("skipped: {}", detail.into()),
        });
    }

    fn finish(self) -> VerifyReport {
        VerifyReport {
            passed: self.checks.iter().all(|c| c.passed),
            checks: self.checks,
        }
    }
}

/// `|a - b| / |b|`, with equal values (including infinities) at distance 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Deterministic policies to check individually: all of them up to `cap`,
/// else `cap` evenly spread indices.
fn policy_sample(m: &CtmdpModel, cap: u128) -> Vec<DeterministicPolicy> {
    let count = DeterministicPolicy::count(m);
    if count <= cap {
        (0..count).map(|i| DeterministicPolicy::nth(m, i)).collect()
    } else {
        (0..cap).map(|i| DeterministicPolicy::nth(m, i * (count / cap))).collect()
    }
}

fn admissible(m: &CtmdpModel, f: &DeterministicPolicy) -> bool {
    f.choice.iter().enumerate().all(|(x, &k)| !m.is_forbidden(x, k))
}

pub fn run_battery(
    m: &CtmdpModel,
    cert: &DriftCertificate,
    lyapunov: Option<&LyapunovCertificate>,
    opts: &VerifyOptions,
) -> VerifyReport {
    let mut b = Battery { checks: Vec::new() };
    if let Err(e) = cert.validate(m) {
        b.fail("drift_certificate", e.to_string());
        return b.finish();
    }
    b.record("drift_certificate", 0.0, 0.0, "");
    let lyap = lyapunov.cloned().unwrap_or_else(|| LyapunovCertificate::from_drift(cert));
    let drift = check_transformed_drift(m, cert, &lyap);
    let honest = drift.passed;
    b.record(
        "transformed_drift",
        drift.metrics.get("max_excess").copied().unwrap_or(f64::NAN).max(0.0),
        crate::conditions::DRIFT_TOL,
        "",
    );
    let tm = match build_w_transform(m, cert) {
        Ok(tm) => tm,
        Err(e) => {
            b.fail("transform", e.to_string());
            return b.finish();
        }
    };
    let d = match build_dtmdp(&tm) {
        Ok(d) => d,
        Err(e) => {
            b.fail("reduction", e.to_string());
            return b.finish();
        }
    };
    reduction_checks(&mut b, &d);

    let n = m.n_states();
    let uniform = StationaryPolicy::uniform(m);
    let feller = FellerOptions {
        n_max: opts.n_max,
        ..Default::default()
    };
    if n <= opts.transition_cap {
        transition_checks(&mut b, m, cert, &tm, &uniform, honest, &feller);
    } else {
        b.skip("lemma3", format!("{n} states exceed the dense cap"));
    }

    let policies = policy_sample(m, opts.policy_cap);
    policy_checks(&mut b, m, cert, &d, &policies);
    let greedy = optimality_checks(&mut b, m, &d, opts);
    if m.n_costs() > 1 {
        lp_checks(&mut b, m, &d, &policies);
    }
    if let Some(f) = greedy {
        monte_carlo_check(&mut b, m, cert, &f, opts);
        scaling_check(&mut b, m, cert, &f);
    }
    b.finish()
}

fn reduction_checks(b: &mut Battery, d: &DtmdpModel) {
    let mut worst = 0.0_f64;
    for x in 0..d.n_states() {
        for k in 0..d.n_actions(x) {
            let sum: f64 = d.kernel_row(x, k).iter().map(|&(_, p)| p).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    b.record("row_sums", worst, 1e-12, "");
    let beta = d.survival_factor();
    b.record("survival_factor", beta, 1.0 - f64::EPSILON, "");
}

fn transition_checks(
    b: &mut Battery,
    m: &CtmdpModel,
    cert: &DriftCertificate,
    tm: &crate::transform::TransformedModel,
    uniform: &StationaryPolicy,
    honest: bool,
    feller: &FellerOptions,
) {
    let n = m.n_states();
    let mut targets: Vec<Vec<usize>> = (0..n).map(|y| vec![y]).collect();
    targets.push((0..n).collect());
    match verify_lemma3(m, cert, &MarkovPolicy::stationary(uniform.clone()), &[0.5, 1.0, 2.0], &targets) {
        Ok(r) => {
            b.record("lemma3", r.max_residual, crate::transform::LEMMA3_TOL, "");
        }
        Err(e) => b.fail("lemma3", e.to_string()),
    }
    let qw = QFunction::transformed(tm, uniform);
    if honest {
        match feller_series(&qw, 0.0, 1.0, feller) {
            Ok(r) => {
                let defect = r.defect().iter().map(|v| v.abs()).fold(0.0, f64::max);
                b.record("honesty_transformed", defect, 1e-8, "");
            }
            Err(e) => b.fail("honesty_transformed", e.to_string()),
        }
    } else {
        b.skip("honesty_transformed", "transformed drift not certified");
    }
    let q = QFunction::from_policy(m, uniform);
    match (feller_series(&q, 0.0, 1.0, feller), uniformization(&q, 1.0)) {
        (Ok(f), Ok(u)) => {
            b.record("feller_vs_uniformization", (&f.total - &u).amax(), 1e-8, "");
        }
        (Err(e), _) | (_, Err(e)) => b.fail("feller_vs_uniformization", e.to_string()),
    }
    match kc_residual(&q, 0.0, 0.5, 1.0, feller) {
        Ok(r) => {
            b.record("kc_residual", r, 1e-7, "");
        }
        Err(e) => b.fail("kc_residual", e.to_string()),
    }
}

fn policy_checks(b: &mut Battery, m: &CtmdpModel, cert: &DriftCertificate, d: &DtmdpModel, policies: &[DeterministicPolicy]) {
    let mut equivalence = 0.0_f64;
    let mut drift_excess = f64::NEG_INFINITY;
    let residual = m.alpha() - cert.rho;
    for f in policies {
        let p = f.to_stationary(m);
        for i in 0..m.n_costs() {
            let exact = ctmdp_value(m, &p, i);
            let reduced = evaluate_deterministic(d, f, i);
            match (exact, reduced) {
                (Ok(exact), Ok(reduced)) => {
                    for (a, e) in d.back_transform(&reduced).iter().zip(&exact) {
                        equivalence = equivalence.max(relative_error(*a, *e));
                    }
                }
                _ => equivalence = f64::INFINITY,
            }
        }
        match resolvent_apply(m, &p, &cert.w) {
            Ok(v) => {
                for (x, vx) in v.iter().enumerate() {
                    drift_excess = drift_excess.max(vx - cert.w[x] / residual);
                }
            }
            Err(_) => drift_excess = f64::INFINITY,
        }
    }
    let detail = format!("{} deterministic policies", policies.len());
    b.record("value_equivalence", equivalence, 1e-8, detail.clone());
    b.record("resolvent_drift_bound", drift_excess.max(0.0), 1e-9, detail);
}

fn optimality_checks(b: &mut Battery, m: &CtmdpModel, d: &DtmdpModel, opts: &VerifyOptions) -> Option<DeterministicPolicy> {
    let vi = ViOptions {
        epsilon: opts.epsilon,
        ..Default::default()
    };
    let (v, report) = match value_iteration(d, &vi) {
        Ok(r) => r,
        Err(e) => {
            b.fail("value_iteration", e.to_string());
            return None;
        }
    };
    b.record("value_iteration_bound", report.error_bound, opts.epsilon, "");
    let f = match extract_greedy_policy(d, &v) {
        Ok(f) => f,
        Err(e) => {
            b.fail("greedy_policy", e.to_string());
            return None;
        }
    };
    match evaluate_deterministic(d, &f, 0) {
        Ok(vf) => {
            let gap = vf.iter().zip(&v).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            b.record("greedy_optimality", gap, 2.0 * opts.epsilon, "");
        }
        Err(e) => b.fail("greedy_optimality", e.to_string()),
    }
    match enumerate_bruteforce(d, opts.policy_cap) {
        Ok(bf) => {
            let gap = bf.values.iter().zip(&v).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            b.record("vi_vs_bruteforce", gap, 1e-8, "");
            b.record(
                "uniform_optimal_policy",
                if bf.policy.is_some() { 0.0 } else { 1.0 },
                0.0,
                "",
            );
        }
        Err(SolverError::CapExceeded { count, .. }) => b.skip("vi_vs_bruteforce", format!("{count} policies")),
        Err(e) => b.fail("vi_vs_bruteforce", e.to_string()),
    }
    admissible(m, &f).then_some(f)
}

fn lp_checks(b: &mut Battery, m: &CtmdpModel, d: &DtmdpModel, policies: &[DeterministicPolicy]) {
    let x0 = d.initial_state();
    let bounds = d.constraint_bounds();
    let mut best_feasible = f64::INFINITY;
    for f in policies.iter().filter(|f| admissible(m, f)) {
        let values: Result<Vec<f64>, _> = (0..d.n_costs()).map(|i| evaluate_deterministic(d, f, i).map(|v| v[x0])).collect();
        if let Ok(values) = values {
            if values[1..].iter().zip(bounds).all(|(v, b)| *v <= b + 1e-12) {
                best_feasible = best_feasible.min(values[0]);
            }
        }
    }
    match solve_constrained_lp(d, bounds, x0) {
        Ok(sol) => {
            b.record("lp_vs_deterministic", (sol.objective - best_feasible).max(0.0), 1e-8, "");
            let lp_excess = sol
                .constraint_values
                .iter()
                .zip(bounds)
                .map(|(v, b)| v - b)
                .fold(0.0, f64::max);
            b.record("lp_constraints", lp_excess, 1e-8, "");
            let mut policy_excess = 0.0_f64;
            for (j, bound) in bounds.iter().enumerate() {
                match policy_evaluation(d, &sol.policy, j + 1) {
                    Ok(v) => policy_excess = policy_excess.max(v[x0] - bound),
                    Err(_) => policy_excess = f64::INFINITY,
                }
            }
            b.record("lp_policy_constraints", policy_excess, 1e-6, "");
            let scale = |v: f64| d.back_transform_scalar(x0, v);
            let mut ctmdp_gap = 0.0_f64;
            for i in 0..m.n_costs() {
                let target = if i == 0 { sol.objective } else { sol.constraint_values[i - 1] };
                match ctmdp_value(m, &sol.ctmdp_policy, i) {
                    Ok(v) => ctmdp_gap = ctmdp_gap.max(relative_error(v[x0], scale(target))),
                    Err(_) => ctmdp_gap = f64::INFINITY,
                }
            }
            b.record("lp_ctmdp_policy", ctmdp_gap, 1e-6, "mixed-rate policy reproduces the LP values");
        }
        Err(SolverError::Infeasible) if best_feasible == f64::INFINITY => {
            b.record("lp_vs_deterministic", 0.0, 0.0, "infeasible, and no deterministic policy is feasible");
        }
        Err(e) => b.fail("lp_vs_deterministic", e.to_string()),
    }
}

fn monte_carlo_check(b: &mut Battery, m: &CtmdpModel, cert: &DriftCertificate, f: &DeterministicPolicy, opts: &VerifyOptions) {
    let p = f.to_stationary(m);
    let x0 = m.initial_state();
    let exact = match ctmdp_value(m, &p, 0) {
        Ok(v) => v[x0],
        Err(e) => {
            b.fail("monte_carlo", e.to_string());
            return;
        }
    };
    let mc = McOptions {
        n_traj: opts.n_traj,
        horizon: opts.horizon,
        seed: opts.seed,
        threads: opts.threads,
        certificate: Some(cert.clone()),
    };
    match estimate_discounted_cost(m, &p, x0, 0, &mc) {
        Ok(e) => {
            let allowed = 4.0 * e.standard_error + e.tail_bound;
            b.record(
                "monte_carlo",
                (e.mean - exact).abs(),
                allowed,
                format!("estimate {} vs exact {exact}", e.mean),
            );
        }
        Err(e) => b.fail("monte_carlo", e.to_string()),
    }
}

fn scaling_check(b: &mut Battery, m: &CtmdpModel, cert: &DriftCertificate, f: &DeterministicPolicy) {
    let values = |c: &DriftCertificate| -> Option<Vec<f64>> {
        let d = build_dtmdp(&build_w_transform(m, c).ok()?).ok()?;
        let v = evaluate_deterministic(&d, f, 0).ok()?;
        Some(d.back_transform(&v))
    };
    match (values(cert), values(&cert.scaled(10.0))) {
        (Some(a), Some(s)) => {
            let worst = a.iter().zip(&s).map(|(x, y)| relative_error(*y, *x)).fold(0.0, f64::max);
            b.record("scaling_invariance", worst, 1e-10, "");
        }
        _ => b.fail("scaling_invariance", "rebuild with 10 w failed"),
    }
}
