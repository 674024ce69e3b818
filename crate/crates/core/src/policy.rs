//! Policies on the original state space `S`.
//!
//! Actions are addressed by their position in `A(x)`. On the reduced model
//! the cemetery `δ` and the absorbing state `x_∞` always use their single
//! action `a_∞`, so policies never store a choice for them.

use crate::model::CtmdpModel;
use serde::{Deserialize, Serialize};

/// Tolerance on per-state probability sums.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("policy covers {got} states, model has {expected}")]
    Length { got: usize, expected: usize },
    #[error("state {state}: action position {position} outside A(x)")]
    Action { state: usize, position: usize },
    #[error("state {state}: weights must be nonnegative and sum to 1 (sum {sum})")]
    Weights { state: usize, sum: f64 },
    #[error("schedule must start at 0 with increasing breakpoints")]
    Schedule,
}

/// `f(x)`: one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub choice: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn check(&self, m: &CtmdpModel) -> Result<(), PolicyError> {
        if self.choice.len() != m.n_states() {
            return Err(PolicyError::Length {
                got: self.choice.len(),
                expected: m.n_states(),
            });
        }
        for (x, &k) in self.choice.iter().enumerate() {
            if k >= m.n_actions(x) {
                return Err(PolicyError::Action { state: x, position: k });
            }
        }
        Ok(())
    }

    pub fn to_stationary(&self, m: &CtmdpModel) -> StationaryPolicy {
        StationaryPolicy {
            distribution: self
                .choice
                .iter()
                .enumerate()
                .map(|(x, &k)| {
                    let mut w = vec![0.0; m.n_actions(x)];
                    w[k] = 1.0;
                    w
                })
                .collect(),
        }
    }

    /// Every deterministic policy of `m`, in lexicographic order of choices.
    pub fn count(m: &CtmdpModel) -> u128 {
        (0..m.n_states()).map(|x| m.n_actions(x) as u128).product()
    }

    /// The `index`-th deterministic policy in lexicographic order
    /// (last state varies fastest).
    pub fn nth(m: &CtmdpModel, mut index: u128) -> Self {
        let n = m.n_states();
        let mut choice = vec![0; n];
        for x in (0..n).rev() {
            let k = m.n_actions(x) as u128;
            choice[x] = (index % k) as usize;
            index /= k;
        }
        Self { choice }
    }
}

/// `π(a|x)`: weights aligned with `A(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub distribution: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn uniform(m: &CtmdpModel) -> Self {
        Self {
            distribution: (0..m.n_states())
                .map(|x| vec![1.0 / m.n_actions(x) as f64; m.n_actions(x)])
                .collect(),
        }
    }

    pub fn check(&self, m: &CtmdpModel) -> Result<(), PolicyError> {
        if self.distribution.len() != m.n_states() {
            return Err(PolicyError::Length {
                got: self.distribution.len(),
                expected: m.n_states(),
            });
        }
        for (x, weights) in self.distribution.iter().enumerate() {
            if weights.len() != m.n_actions(x) {
                return Err(PolicyError::Action {
                    state: x,
                    position: weights.len(),
                });
            }
            let sum: f64 = weights.iter().sum();
            if weights.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(PolicyError::Weights { state: x, sum });
            }
        }
        Ok(())
    }

    pub fn weights(&self, x: usize) -> &[f64] {
        &self.distribution[x]
    }

    /// The deterministic policy if every row is a point mass.
    pub fn as_deterministic(&self) -> Option<DeterministicPolicy> {
        self.distribution
            .iter()
            .map(|w| {
                let support: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
                (support.len() == 1).then(|| support[0])
            })
            .collect::<Option<Vec<_>>>()
            .map(|choice| DeterministicPolicy { choice })
    }
}

/// A Markov policy that is piecewise constant in time: `policies[j]` acts on
/// `[breaks[j], breaks[j+1])`, the last one forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub breaks: Vec<f64>,
    pub policies: Vec<StationaryPolicy>,
}

impl MarkovPolicy {
    pub fn stationary(p: StationaryPolicy) -> Self {
        Self {
            breaks: vec![0.0],
            policies: vec![p],
        }
    }

    pub fn check(&self, m: &CtmdpModel) -> Result<(), PolicyError> {
        if self.breaks.len() != self.policies.len()
            || self.breaks.first() != Some(&0.0)
            || self.breaks.windows(2).any(|b| !(b[1] > b[0]))
        {
            return Err(PolicyError::Schedule);
        }
        self.policies.iter().try_for_each(|p| p.check(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CtmdpModel, ModelParts, RateKernel, StateId};

    fn model(actions: Vec<Vec<usize>>) -> CtmdpModel {
        let n = actions.len();
        CtmdpModel::new(ModelParts {
            states: (0..n).map(|index| StateId { index, label: None }).collect(),
            action_sets: actions,
            rates: RateKernel::default(),
            costs: vec![vec![]],
            alpha: 1.0,
            constraint_bounds: vec![],
            initial_state: 0,
        })
        .unwrap()
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let m = model(vec![vec![0, 1], vec![0, 1, 2]]);
        assert_eq!(DeterministicPolicy::count(&m), 6);
        let all: Vec<_> = (0..6).map(|i| DeterministicPolicy::nth(&m, i).choice).collect();
        assert_eq!(all, vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 1], vec![1, 2]]);
    }

    #[test]
    fn stationary_checks() {
        let m = model(vec![vec![0, 1]]);
        assert!(StationaryPolicy { distribution: vec![vec![0.5, 0.5]] }.check(&m).is_ok());
        assert!(StationaryPolicy { distribution: vec![vec![0.5, 0.6]] }.check(&m).is_err());
        assert!(StationaryPolicy { distribution: vec![vec![1.5, -0.5]] }.check(&m).is_err());
        let det = DeterministicPolicy { choice: vec![1] };
        let st = det.to_stationary(&m);
        assert_eq!(st.distribution, vec![vec![0.0, 1.0]]);
        assert_eq!(st.as_deterministic(), Some(det));
    }

    #[test]
    fn markov_schedule_must_start_at_zero() {
        let m = model(vec![vec![0]]);
        let p = StationaryPolicy::uniform(&m);
        let bad = MarkovPolicy { breaks: vec![0.5], policies: vec![p.clone()] };
        assert_eq!(bad.check(&m), Err(PolicyError::Schedule));
        let good = MarkovPolicy { breaks: vec![0.0, 0.5], policies: vec![p.clone(), p] };
        assert!(good.check(&m).is_ok());
    }
}
