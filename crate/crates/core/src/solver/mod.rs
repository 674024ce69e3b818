//! Solvers for the reduced DTMDP.
//!
//! Values are indexed by DTMDP state (`S`, then `δ`, then `x_∞`); policies
//! only cover `S`.

mod simplex;

pub use simplex::{solve_lp, LinearProgram, LpOutcome};

use crate::linalg::solve_with_infinities;
use crate::policy::{DeterministicPolicy, StationaryPolicy};
use crate::reduction::DtmdpModel;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Relative tolerance under which two Q-values count as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Default cap on the number of enumerated policies.
pub const BRUTEFORCE_CAP: u128 = 1_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SolverError {
    #[error("value at state {state} exceeds the divergence ceiling")]
    DivergenceGuard { state: usize },
    #[error("no admissible action at state {state}")]
    NoAdmissibleAction { state: usize },
    #[error("policy evaluation system is numerically singular")]
    SingularSystem,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("{count} policies exceed the enumeration cap {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Last sup-norm change.
    pub delta: f64,
    /// `β Δ / (1 - β)`.
    pub error_bound: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_status: Option<String>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub epsilon: f64,
    /// Values above this are treated as divergent.
    pub ceiling: f64,
    pub max_iterations: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            ceiling: 1e15,
            max_iterations: 10_000_000,
        }
    }
}

fn q_value(d: &DtmdpModel, i: usize, x: usize, k: usize, v: &[f64]) -> f64 {
    let c = d.cost(i, x, k);
    if c == f64::INFINITY {
        return c;
    }
    c + d.kernel_row(x, k).iter().map(|&(y, p)| p * v[y]).sum::<f64>()
}

/// Value iteration from `V ≡ 0` for the cost `C̃_0`, stopped when
/// `β Δ / (1 - β) ≤ ε`.
pub fn value_iteration(d: &DtmdpModel, opts: &ViOptions) -> Result<(Vec<f64>, SolveReport), SolverError> {
    if !(opts.epsilon > 0.0) {
        return Err(SolverError::Argument(format!("epsilon = {} must be > 0", opts.epsilon)));
    }
    let start = Instant::now();
    let beta = d.survival_factor();
    let dim = d.n_states();
    let mut v = vec![0.0; dim];
    let mut iterations = 0;
    loop {
        let mut next = vec![0.0; dim];
        for (x, slot) in next.iter_mut().enumerate() {
            let best = (0..d.n_actions(x)).map(|k| q_value(d, 0, x, k, &v)).fold(f64::INFINITY, f64::min);
            if !(best <= opts.ceiling) {
                return Err(SolverError::DivergenceGuard { state: x });
            }
            *slot = best;
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        let error_bound = beta * delta / (1.0 - beta);
        if error_bound <= opts.epsilon || iterations >= opts.max_iterations {
            return Ok((
                v,
                SolveReport {
                    iterations,
                    delta,
                    error_bound,
                    beta,
                    lp_status: None,
                    runtime_secs: start.elapsed().as_secs_f64(),
                },
            ));
        }
    }
}

/// Per state of `S`, the admissible action minimizing `C̃_0 + T V`; ties go to
/// the lowest position in `A(x)`.
pub fn extract_greedy_policy(d: &DtmdpModel, v: &[f64]) -> Result<DeterministicPolicy, SolverError> {
    let mut choice = Vec::with_capacity(d.n_original());
    for x in 0..d.n_original() {
        let q: Vec<f64> = (0..d.n_actions(x)).map(|k| q_value(d, 0, x, k, v)).collect();
        let best = q.iter().copied().fold(f64::INFINITY, f64::min);
        if best == f64::INFINITY {
            return Err(SolverError::NoAdmissibleAction { state: x });
        }
        let tol = TIE_TOL * best.abs().max(1.0);
        choice.push(q.iter().position(|&qk| qk <= best + tol).expect("minimum is attained"));
    }
    Ok(DeterministicPolicy { choice })
}

/// Exact total cost of `C̃_i` under a stationary policy, by a dense solve of
/// `(I - T_π) V = C̃_π` on `S ∪ {δ}`. States that reach an infinite cost get
/// `+∞`.
pub fn policy_evaluation(d: &DtmdpModel, p: &StationaryPolicy, i: usize) -> Result<Vec<f64>, SolverError> {
    let n = d.n_original();
    if p.distribution.len() != n || (0..n).any(|x| p.distribution[x].len() != d.n_actions(x)) {
        return Err(SolverError::Policy("policy does not match the action sets".into()));
    }
    if i >= d.n_costs() {
        return Err(SolverError::Argument(format!("cost index {i} out of range")));
    }
    let dim = n + 1;
    let mut mat = DMatrix::identity(dim, dim);
    let mut rhs = vec![0.0; dim];
    let rows = (0..dim).map(|x| {
        if x < n {
            p.weights(x).to_vec()
        } else {
            vec![1.0]
        }
    });
    for (x, weights) in rows.enumerate() {
        for (k, &pk) in weights.iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            let c = d.cost(i, x, k);
            rhs[x] += if c == f64::INFINITY { f64::INFINITY } else { pk * c };
            for &(y, t) in d.kernel_row(x, k) {
                if y < dim {
                    mat[(x, y)] -= pk * t;
                }
            }
        }
    }
    let mut v = solve_with_infinities(&mat, &rhs).ok_or(SolverError::SingularSystem)?;
    v.push(0.0);
    Ok(v)
}

pub fn evaluate_deterministic(d: &DtmdpModel, f: &DeterministicPolicy, i: usize) -> Result<Vec<f64>, SolverError> {
    let p = StationaryPolicy {
        distribution: f
            .choice
            .iter()
            .enumerate()
            .map(|(x, &k)| {
                let mut w = vec![0.0; d.n_actions(x)];
                if k < w.len() {
                    w[k] = 1.0;
                }
                w
            })
            .collect(),
    };
    if f.choice.iter().enumerate().any(|(x, &k)| k >= d.n_actions(x)) {
        return Err(SolverError::Policy("action position outside A(x)".into()));
    }
    policy_evaluation(d, &p, i)
}

fn policy_count(d: &DtmdpModel) -> u128 {
    (0..d.n_original()).map(|x| d.n_actions(x) as u128).product()
}

fn nth_policy(d: &DtmdpModel, mut index: u128) -> DeterministicPolicy {
    let n = d.n_original();
    let mut choice = vec![0; n];
    for x in (0..n).rev() {
        let k = d.n_actions(x) as u128;
        choice[x] = (index % k) as usize;
        index /= k;
    }
    DeterministicPolicy { choice }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// Pointwise minimum of `C̃_0` totals over all deterministic policies.
    pub values: Vec<f64>,
    /// Lowest-index policy attaining the minimum at every state, if any.
    pub policy: Option<DeterministicPolicy>,
    pub policies_evaluated: u128,
}

/// Evaluates every deterministic stationary policy. Work is split across the
/// rayon pool; the merge does not depend on the split.
pub fn enumerate_bruteforce(d: &DtmdpModel, cap: u128) -> Result<BruteForceResult, SolverError> {
    let count = policy_count(d);
    if count > cap {
        return Err(SolverError::CapExceeded { count, cap });
    }
    let dim = d.n_states();
    let total = count as u64;
    let evaluate = |index: u64| evaluate_deterministic(d, &nth_policy(d, index as u128), 0);
    let values = (0..total)
        .into_par_iter()
        .map(|i| evaluate(i))
        .try_reduce(
            || vec![f64::INFINITY; dim],
            |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()),
        )?;
    let attains = |v: &[f64]| {
        v.iter()
            .zip(&values)
            .all(|(a, b)| *a == *b || (a - b).abs() <= 1e-10 * b.abs().max(1.0))
    };
    let policy = (0..total)
        .into_par_iter()
        .find_first(|&i| evaluate(i).map(|v| attains(&v)).unwrap_or(false))
        .map(|i| nth_policy(d, i as u128));
    Ok(BruteForceResult {
        values,
        policy,
        policies_evaluated: count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    /// `μ(x,a)/Σ_a' μ(x,a')`: the optimal stationary policy of the DTMDP.
    pub policy: StationaryPolicy,
    /// The same policy acting on the CTMDP through mixed rates.
    pub ctmdp_policy: StationaryPolicy,
    /// `μ(x, a)` on `S ∪ {δ}`, aligned with the action sets.
    pub occupation: Vec<Vec<f64>>,
    /// `Σ C̃_0 μ`.
    pub objective: f64,
    /// `Σ C̃_j μ` for `j = 1..N`.
    pub constraint_values: Vec<f64>,
    pub report: SolveReport,
}

/// Occupation-measure LP for the constrained problem from `x0`, with bounds
/// already on the DTMDP scale.
pub fn solve_constrained_lp(d: &DtmdpModel, bounds: &[f64], x0: usize) -> Result<LpSolution, SolverError> {
    let n = d.n_original();
    if x0 >= n {
        return Err(SolverError::Argument(format!("initial state {x0} outside S")));
    }
    if bounds.len() + 1 != d.n_costs() {
        return Err(SolverError::Argument(format!(
            "{} bounds for {} constraint costs",
            bounds.len(),
            d.n_costs() - 1
        )));
    }
    let start = Instant::now();
    let dim = n + 1;
    let columns: Vec<(usize, usize)> = (0..dim)
        .flat_map(|x| (0..d.n_actions(x)).map(move |k| (x, k)))
        .filter(|&(x, k)| (0..d.n_costs()).all(|i| d.cost(i, x, k).is_finite()))
        .collect();
    let mut a_eq = vec![vec![0.0; columns.len()]; dim];
    for (j, &(x, k)) in columns.iter().enumerate() {
        a_eq[x][j] += 1.0;
        for &(y, t) in d.kernel_row(x, k) {
            if y < dim {
                a_eq[y][j] -= t;
            }
        }
    }
    let mut b_eq = vec![0.0; dim];
    b_eq[x0] = 1.0;
    let cost_row = |i: usize| columns.iter().map(|&(x, k)| d.cost(i, x, k)).collect::<Vec<f64>>();
    let lp = LinearProgram {
        objective: cost_row(0),
        a_eq,
        b_eq,
        a_ub: (1..d.n_costs()).map(cost_row).collect(),
        b_ub: bounds.to_vec(),
    };
    let (mu, objective, pivots) = match solve_lp(&lp) {
        LpOutcome::Optimal { x, objective, pivots } => (x, objective, pivots),
        LpOutcome::Infeasible => return Err(SolverError::Infeasible),
        LpOutcome::Unbounded => return Err(SolverError::Unbounded),
    };
    let mut occupation: Vec<Vec<f64>> = (0..dim).map(|x| vec![0.0; d.n_actions(x)]).collect();
    for (j, &(x, k)) in columns.iter().enumerate() {
        occupation[x][k] = mu[j];
    }
    let constraint_values = (1..d.n_costs())
        .map(|i| columns.iter().zip(&mu).map(|(&(x, k), m)| d.cost(i, x, k) * m).sum())
        .collect();
    let distribution = (0..n)
        .map(|x| {
            let total: f64 = occupation[x].iter().sum();
            if total > 0.0 {
                occupation[x].iter().map(|m| m / total).collect()
            } else {
                let mut w = vec![0.0; d.n_actions(x)];
                let k = (0..d.n_actions(x)).find(|&k| !d.is_forbidden(x, k)).unwrap_or(0);
                w[k] = 1.0;
                w
            }
        })
        .collect();
    let policy = StationaryPolicy { distribution };
    Ok(LpSolution {
        ctmdp_policy: d.ctmdp_policy(&policy),
        policy,
        occupation,
        objective,
        constraint_values,
        report: SolveReport {
            iterations: pivots,
            delta: 0.0,
            error_bound: 0.0,
            beta: d.survival_factor(),
            lp_status: Some("optimal".into()),
            runtime_secs: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::DriftCertificate;
    use crate::model::{CostEntry, CtmdpModel, ModelParts, RateKernel, StateId};
    use crate::reduction::build_dtmdp;
    use crate::transform::build_w_transform;

    fn single_state_two_actions(bound: f64) -> DtmdpModel {
        let m = CtmdpModel::new(ModelParts {
            states: vec![StateId { index: 0, label: None }],
            action_sets: vec![vec![0, 1]],
            rates: RateKernel::default(),
            costs: vec![
                vec![CostEntry { x: 0, action: 0, value: 1.0 }, CostEntry { x: 0, action: 1, value: 0.0 }],
                vec![CostEntry { x: 0, action: 0, value: 0.0 }, CostEntry { x: 0, action: 1, value: 2.0 }],
            ],
            alpha: 1.0,
            constraint_bounds: vec![bound],
            initial_state: 0,
        })
        .unwrap();
        let tm = build_w_transform(&m, &DriftCertificate { w: vec![1.0], rho: 0.5, l: 1e-6 }).unwrap();
        build_dtmdp(&tm).unwrap()
    }

    #[test]
    fn two_point_mixture() {
        let d = single_state_two_actions(1.0);
        let sol = solve_constrained_lp(&d, d.constraint_bounds(), 0).unwrap();
        assert!((sol.objective - 0.5).abs() < 1e-12);
        assert!((sol.constraint_values[0] - 1.0).abs() < 1e-12);
        assert!((sol.policy.distribution[0][0] - 0.5).abs() < 1e-12);
        let v0 = policy_evaluation(&d, &sol.policy, 0).unwrap();
        let v1 = policy_evaluation(&d, &sol.policy, 1).unwrap();
        assert!((v0[0] - 0.5).abs() < 1e-12 && (v1[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_bound() {
        let d = single_state_two_actions(-0.5);
        assert_eq!(solve_constrained_lp(&d, d.constraint_bounds(), 0).unwrap_err(), SolverError::Infeasible);
    }

    #[test]
    fn greedy_prefers_cheaper_then_lowest_index() {
        let d = single_state_two_actions(1.0);
        let f = extract_greedy_policy(&d, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.choice, vec![1]);
        // identical actions: equal Q-values pick position 0
        let m = CtmdpModel::new(ModelParts {
            states: vec![StateId { index: 0, label: None }],
            action_sets: vec![vec![3, 7]],
            rates: RateKernel::default(),
            costs: vec![vec![CostEntry { x: 0, action: 3, value: 1.0 }, CostEntry { x: 0, action: 7, value: 1.0 }]],
            alpha: 1.0,
            constraint_bounds: vec![],
            initial_state: 0,
        })
        .unwrap();
        let tm = build_w_transform(&m, &DriftCertificate { w: vec![1.0], rho: 0.5, l: 1e-6 }).unwrap();
        let d = build_dtmdp(&tm).unwrap();
        let (v, _) = value_iteration(&d, &ViOptions::default()).unwrap();
        assert_eq!(extract_greedy_policy(&d, &v).unwrap().choice, vec![0]);
    }

    #[test]
    fn value_iteration_on_frozen_state() {
        let d = single_state_two_actions(1.0);
        let (v, report) = value_iteration(&d, &ViOptions::default()).unwrap();
        assert!(v[0].abs() < 1e-12);
        assert_eq!(v[2], 0.0);
        assert!(report.error_bound <= 1e-9);
        let bf = enumerate_bruteforce(&d, BRUTEFORCE_CAP).unwrap();
        assert_eq!(bf.policy.unwrap().choice, vec![1]);
        assert_eq!(bf.policies_evaluated, 2);
    }

    #[test]
    fn cap_is_enforced() {
        let d = single_state_two_actions(1.0);
        assert_eq!(enumerate_bruteforce(&d, 1).unwrap_err(), SolverError::CapExceeded { count: 2, cap: 1 });
    }
}
