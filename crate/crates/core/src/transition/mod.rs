//! Transition functions of finite, piecewise-homogeneous Q-functions.
//!
//! Two independent routes are provided:
//!
//! * [`feller_series`]: the minimal (Feller) construction, summing the
//!   contributions `p^(n)` of trajectories with exactly `n` jumps. Layers are
//!   built backwards in the start time with composite Gauss–Legendre
//!   quadrature. The sum is sub-stochastic; its row defect is the mass lost
//!   to explosion or, in leaky truncations, to the discarded boundary flow.
//! * [`uniformization`]: `e^{tQ}` as a Poisson mixture of powers of
//!   `I + Q/Λ`, for homogeneous chains.

mod feller;
mod quadrature;
mod uniformization;

pub use feller::{feller_series, honesty_defect, kc_residual, row_defect, FellerOptions, FellerSeriesResult};
pub use quadrature::{gauss_legendre, lagrange_basis};
pub use uniformization::{uniformization, POISSON_TAIL};

use crate::model::{CtmdpModel, ModelFamily};
use crate::policy::{MarkovPolicy, StationaryPolicy};
use crate::transform::TransformedModel;
use nalgebra::DMatrix;

/// Tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum TransitionError {
    #[error("invalid Q-function: {0}")]
    InvalidQ(String),
    #[error("quadrature produced a non-finite value in layer {layer}")]
    Quadrature { layer: usize },
    #[error("invalid time arguments: {0}")]
    Time(String),
}

/// A conservative (or, in leaky mode, sub-conservative) stable Q-function on a
/// finite space, piecewise constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    breaks: Vec<f64>,
    generators: Vec<DMatrix<f64>>,
    leaky: bool,
}

impl QFunction {
    pub fn homogeneous(generator: DMatrix<f64>) -> Result<Self, TransitionError> {
        Self::piecewise(vec![0.0], vec![generator], false)
    }

    /// A generator whose rows may sum to a negative number: the deficit is a
    /// killing rate with no target state.
    pub fn leaky(generator: DMatrix<f64>) -> Result<Self, TransitionError> {
        Self::piecewise(vec![0.0], vec![generator], true)
    }

    /// `generators[j]` is in force on `[breaks[j], breaks[j+1])`.
    pub fn piecewise(breaks: Vec<f64>, generators: Vec<DMatrix<f64>>, leaky: bool) -> Result<Self, TransitionError> {
        if breaks.is_empty() || breaks.len() != generators.len() || breaks[0] != 0.0 {
            return Err(TransitionError::InvalidQ("breakpoints must start at 0, one per generator".into()));
        }
        if breaks.windows(2).any(|b| !(b[1] > b[0])) {
            return Err(TransitionError::InvalidQ("breakpoints must increase".into()));
        }
        let n = generators[0].nrows();
        for g in &generators {
            if g.nrows() != n || g.ncols() != n {
                return Err(TransitionError::InvalidQ("generators must be square and equally sized".into()));
            }
            for x in 0..n {
                let mut sum = 0.0;
                let mut scale = 0.0_f64;
                for y in 0..n {
                    let v = g[(x, y)];
                    if !v.is_finite() {
                        return Err(TransitionError::InvalidQ(format!("non-finite rate at ({x}, {y})")));
                    }
                    if x != y && v < 0.0 {
                        return Err(TransitionError::InvalidQ(format!("negative off-diagonal rate at ({x}, {y})")));
                    }
                    sum += v;
                    scale = scale.max(v.abs());
                }
                let tol = ROW_SUM_TOL * scale.max(1.0);
                if sum > tol || (!leaky && sum < -tol) {
                    return Err(TransitionError::InvalidQ(format!("row {x} sums to {sum}")));
                }
            }
        }
        Ok(Self {
            breaks,
            generators,
            leaky,
        })
    }

    /// `Q_π` for a stationary policy on the original model.
    pub fn from_policy(m: &CtmdpModel, p: &StationaryPolicy) -> Self {
        Self::homogeneous(policy_generator(m, p)).expect("policy generators are conservative")
    }

    pub fn from_markov_policy(m: &CtmdpModel, p: &MarkovPolicy) -> Self {
        let gens = p.policies.iter().map(|pi| policy_generator(m, pi)).collect();
        Self::piecewise(p.breaks.clone(), gens, false).expect("policy generators are conservative")
    }

    /// `q^w_φ` on `S ∪ {δ}` for a stationary policy.
    pub fn transformed(tm: &TransformedModel, p: &StationaryPolicy) -> Self {
        Self::homogeneous(tm.policy_generator(p)).expect("transformed generators are conservative")
    }

    pub fn transformed_markov(tm: &TransformedModel, p: &MarkovPolicy) -> Self {
        let gens = p.policies.iter().map(|pi| tm.policy_generator(pi)).collect();
        Self::piecewise(p.breaks.clone(), gens, false).expect("transformed generators are conservative")
    }

    /// Leaky truncation of a family: the outflow of the top state is discarded.
    pub fn leaky_family(f: &ModelFamily) -> Result<Self, TransitionError> {
        let n = f.truncation;
        let transitions = f.transitions().map_err(|e| TransitionError::InvalidQ(e.to_string()))?;
        let mut g = DMatrix::zeros(n, n);
        for (x, y, r) in transitions {
            g[(x - 1, y - 1)] += r;
            g[(x - 1, x - 1)] -= r;
        }
        g[(n - 1, n - 1)] -= f.boundary_outflow();
        Self::leaky(g)
    }

    pub fn dim(&self) -> usize {
        self.generators[0].nrows()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.generators.len() == 1
    }

    pub fn is_leaky(&self) -> bool {
        self.leaky
    }

    /// `sup_{x,s} q_x(s)`.
    pub fn bound(&self) -> f64 {
        self.generators
            .iter()
            .flat_map(|g| (0..g.nrows()).map(move |x| -g[(x, x)]))
            .fold(0.0, f64::max)
    }

    /// Generator in force at time `s`.
    pub fn generator_at(&self, s: f64) -> &DMatrix<f64> {
        let j = self.breaks.partition_point(|&b| b <= s).saturating_sub(1);
        &self.generators[j]
    }

    pub(crate) fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub(crate) fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }
}

/// Dense `Q_π = Σ_a π(a|x) q(·|x,a)` with derived diagonal.
pub fn policy_generator(m: &CtmdpModel, p: &StationaryPolicy) -> DMatrix<f64> {
    let n = m.n_states();
    let mut g = DMatrix::zeros(n, n);
    for x in 0..n {
        for (k, &pk) in p.weights(x).iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            for &(y, q) in m.rate_row(x, k) {
                g[(x, y)] += pk * q;
            }
        }
        let out: f64 = (0..n).filter(|&y| y != x).map(|y| g[(x, y)]).sum();
        g[(x, x)] = -out;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_conservative_rows_unless_leaky() {
        let g = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, 0.0]);
        assert!(QFunction::homogeneous(g.clone()).is_err());
        assert!(QFunction::leaky(g).is_ok());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!(QFunction::leaky(neg).is_err());
    }

    #[test]
    fn generator_lookup_by_time() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[-3.0, 3.0, 0.0, 0.0]);
        let q = QFunction::piecewise(vec![0.0, 1.0], vec![a.clone(), b.clone()], false).unwrap();
        assert_eq!(q.generator_at(0.5), &a);
        assert_eq!(q.generator_at(1.0), &b);
        assert_eq!(q.generator_at(7.0), &b);
        assert_eq!(q.bound(), 3.0);
        assert!(!q.is_homogeneous());
    }
}
