//! Direct evaluation on the original CTMDP: `(αI - Q_π)^{-1} r`.

use crate::linalg::solve_with_infinities;
use crate::model::CtmdpModel;
use crate::policy::StationaryPolicy;
use crate::transition::policy_generator;
use nalgebra::DMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ResolventError {
    #[error("resolvent system is numerically singular")]
    Singular,
    #[error("rate vector has {got} entries for {expected} states")]
    Length { got: usize, expected: usize },
}

/// `c̄_i(x) = Σ_a c_i(x,a) π(a|x)`, `+∞` if an infinite cost has positive weight.
pub fn policy_cost_rate(m: &CtmdpModel, p: &StationaryPolicy, i: usize) -> Vec<f64> {
    (0..m.n_states())
        .map(|x| {
            p.weights(x)
                .iter()
                .enumerate()
                .filter(|&(_, &pk)| pk > 0.0)
                .map(|(k, &pk)| {
                    let c = m.cost(i, x, k);
                    if c == f64::INFINITY {
                        c
                    } else {
                        pk * c
                    }
                })
                .sum()
        })
        .collect()
}

/// `(αI - Q_π)^{-1} r`.
pub fn resolvent_apply(m: &CtmdpModel, p: &StationaryPolicy, r: &[f64]) -> Result<Vec<f64>, ResolventError> {
    let n = m.n_states();
    if r.len() != n {
        return Err(ResolventError::Length { got: r.len(), expected: n });
    }
    let mat = DMatrix::identity(n, n) * m.alpha() - policy_generator(m, p);
    solve_with_infinities(&mat, r).ok_or(ResolventError::Singular)
}

/// Expected `α`-discounted cost `c_i` under `π`, from every state.
pub fn ctmdp_value(m: &CtmdpModel, p: &StationaryPolicy, i: usize) -> Result<Vec<f64>, ResolventError> {
    resolvent_apply(m, p, &policy_cost_rate(m, p, i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostEntry, ModelParts, RateEntry, RateKernel, StateId};

    #[test]
    fn two_state_closed_form() {
        // 0 -> 1 at rate λ, cost 1 in state 0: V(0) = 1/(α+λ)
        let (lambda, alpha) = (1.5, 0.7);
        let m = CtmdpModel::new(ModelParts {
            states: (0..2).map(|index| StateId { index, label: None }).collect(),
            action_sets: vec![vec![0]; 2],
            rates: RateKernel {
                entries: vec![RateEntry { x: 0, action: 0, y: 1, rate: lambda }],
            },
            costs: vec![vec![CostEntry { x: 0, action: 0, value: 1.0 }]],
            alpha,
            constraint_bounds: vec![],
            initial_state: 0,
        })
        .unwrap();
        let p = StationaryPolicy::uniform(&m);
        let v = ctmdp_value(&m, &p, 0).unwrap();
        assert!((v[0] - 1.0 / (alpha + lambda)).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        let ones = resolvent_apply(&m, &p, &[1.0, 1.0]).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0 / alpha).abs() < 1e-14));
    }
}
