//! Reduction of the transformed model to a total-cost discrete-time MDP.
//!
//! States are `S`, then `δ` (index `|S|`) and the absorbing `x_∞`
//! (index `|S|+1`). From `x ∈ S` under `a` the chain jumps to `y ∈ S` with
//! probability `w(y) q(y|x,a) / ((α + q_x(a)) w(x))`, to `δ` with the drift
//! slack and to `x_∞` with `(α-ρ)/(α+q_x(a))`. Both sinks move to `x_∞`.

use crate::model::{CostValue, Label};
use crate::policy::StationaryPolicy;
use crate::transform::TransformedModel;
use serde::{Deserialize, Serialize};

/// Largest row-sum deviation repaired by renormalization.
pub const ROW_SUM_REPAIR: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReductionError {
    #[error("row ({state}, action {action}) sums to {sum}")]
    RowSum { state: usize, action: usize, sum: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtmdpModel {
    n: usize,
    labels: Vec<String>,
    actions: Vec<Vec<usize>>,
    kernel: Vec<Vec<Vec<(usize, f64)>>>,
    costs: Vec<Vec<Vec<f64>>>,
    alpha: f64,
    rho: f64,
    w: Vec<f64>,
    source_exit: Vec<Vec<f64>>,
    shift: f64,
    bounds: Vec<f64>,
    initial: usize,
}

pub fn build_dtmdp(tm: &TransformedModel) -> Result<DtmdpModel, ReductionError> {
    let n = tm.n_original();
    let delta = n;
    let x_inf = n + 1;
    let residual = tm.residual_discount();
    let mut kernel = Vec::with_capacity(n + 2);
    for x in 0..n {
        let mut per_x = Vec::with_capacity(tm.n_actions(x));
        for k in 0..tm.n_actions(x) {
            let denom = tm.alpha() + tm.source_exit_rate(x, k);
            let mut row: Vec<(usize, f64)> = tm.rate_row(x, k).iter().map(|&(y, q)| (y, q / denom)).collect();
            row.push((x_inf, residual / denom));
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_REPAIR {
                return Err(ReductionError::RowSum {
                    state: x,
                    action: tm.action_index(x, k),
                    sum,
                });
            }
            if sum != 1.0 {
                for entry in &mut row {
                    entry.1 /= sum;
                }
            }
            per_x.push(row);
        }
        kernel.push(per_x);
    }
    kernel.push(vec![vec![(x_inf, 1.0)]]);
    kernel.push(vec![vec![(x_inf, 1.0)]]);

    let costs = (0..tm.n_costs())
        .map(|i| {
            let mut table: Vec<Vec<f64>> = (0..n)
                .map(|x| {
                    (0..tm.n_actions(x))
                        .map(|k| tm.shifted_cost(i, x, k) / (tm.alpha() + tm.source_exit_rate(x, k)))
                        .collect()
                })
                .collect();
            table.push(vec![tm.shifted_cost(i, delta, 0) / residual]);
            table.push(vec![0.0]);
            table
        })
        .collect();

    let mut labels: Vec<String> = (0..=n).map(|x| tm.label(x).to_string()).collect();
    let mut inf_label = "x_inf".to_string();
    while labels.contains(&inf_label) {
        inf_label.insert(0, '_');
    }
    labels.push(inf_label);
    let mut actions: Vec<Vec<usize>> = (0..=n).map(|x| tm.actions(x).to_vec()).collect();
    actions.push(vec![0]);
    Ok(DtmdpModel {
        n,
        labels,
        actions,
        kernel,
        costs,
        alpha: tm.alpha(),
        rho: tm.rho(),
        w: tm.w().to_vec(),
        source_exit: (0..n)
            .map(|x| (0..tm.n_actions(x)).map(|k| tm.source_exit_rate(x, k)).collect())
            .collect(),
        shift: tm.shift(),
        bounds: tm.constraint_bounds().to_vec(),
        initial: tm.initial_state(),
    })
}

impl DtmdpModel {
    /// `|S| + 2`.
    pub fn n_states(&self) -> usize {
        self.n + 2
    }

    pub fn n_original(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> usize {
        self.n
    }

    pub fn x_inf(&self) -> usize {
        self.n + 1
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn n_actions(&self, x: usize) -> usize {
        self.actions[x].len()
    }

    pub fn actions(&self, x: usize) -> &[usize] {
        &self.actions[x]
    }

    pub fn action_index(&self, x: usize, k: usize) -> usize {
        self.actions[x][k]
    }

    /// `T(·|x,a)` as `(y, probability)` pairs.
    pub fn kernel_row(&self, x: usize, k: usize) -> &[(usize, f64)] {
        &self.kernel[x][k]
    }

    pub fn transition(&self, x: usize, k: usize, y: usize) -> f64 {
        self.kernel[x][k].iter().filter(|&&(z, _)| z == y).map(|&(_, p)| p).sum()
    }

    pub fn n_costs(&self) -> usize {
        self.costs.len()
    }

    /// `C̃_i(x,a)`.
    pub fn cost(&self, i: usize, x: usize, k: usize) -> f64 {
        self.costs[i][x][k]
    }

    pub fn is_forbidden(&self, x: usize, k: usize) -> bool {
        self.costs[0][x][k] == f64::INFINITY
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn residual_discount(&self) -> f64 {
        self.alpha - self.rho
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// Constraint bounds on the DTMDP scale.
    pub fn constraint_bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// `β = max_{x∈S,a} (q_x(a)+ρ)/(q_x(a)+α)`: the largest probability of
    /// staying in `S ∪ {δ}` for one more step.
    pub fn survival_factor(&self) -> f64 {
        self.source_exit
            .iter()
            .flatten()
            .map(|q| (q + self.rho) / (q + self.alpha))
            .fold(0.0, f64::max)
    }

    /// The stationary DTMDP policy with the same values as the CTMDP policy
    /// `π` acting through its mixed rates: `σ(a|x) ∝ π(a|x)(α + q_x(a))`.
    pub fn dtmdp_policy(&self, p: &StationaryPolicy) -> StationaryPolicy {
        self.reweight(p, |q| self.alpha + q)
    }

    /// Inverse of [`DtmdpModel::dtmdp_policy`]: `π(a|x) ∝ σ(a|x)/(α + q_x(a))`.
    pub fn ctmdp_policy(&self, p: &StationaryPolicy) -> StationaryPolicy {
        self.reweight(p, |q| 1.0 / (self.alpha + q))
    }

    fn reweight(&self, p: &StationaryPolicy, factor: impl Fn(f64) -> f64) -> StationaryPolicy {
        StationaryPolicy {
            distribution: p
                .distribution
                .iter()
                .zip(&self.source_exit)
                .map(|(weights, exits)| {
                    let raw: Vec<f64> = weights.iter().zip(exits).map(|(&pk, &q)| pk * factor(q)).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / total).collect()
                })
                .collect(),
        }
    }

    /// CTMDP-scale values `w(x)(Ṽ(x) + c̲/(α-ρ))` on `S`.
    pub fn back_transform(&self, v: &[f64]) -> Vec<f64> {
        crate::transform::back_transform_value(&v[..self.n], &self.w, self.shift, self.residual_discount())
    }

    /// [`DtmdpModel::back_transform`] of a single value at `x`.
    pub fn back_transform_scalar(&self, x: usize, v: f64) -> f64 {
        self.w[x] * (v + self.shift / self.residual_discount())
    }

    fn lab(&self, x: usize) -> Label {
        Label::from(self.labels[x].as_str())
    }

    pub fn to_json(&self) -> DtmdpFile {
        let mut kernel = Vec::new();
        for (x, per_x) in self.kernel.iter().enumerate() {
            for (k, row) in per_x.iter().enumerate() {
                for &(y, p) in row {
                    kernel.push((self.lab(x), self.actions[x][k], self.lab(y), p));
                }
            }
        }
        let costs = self
            .costs
            .iter()
            .map(|table| {
                table
                    .iter()
                    .enumerate()
                    .flat_map(|(x, per_x)| {
                        per_x
                            .iter()
                            .enumerate()
                            .map(move |(k, &c)| (self.lab(x), self.actions[x][k], CostValue::from(c)))
                    })
                    .collect()
            })
            .collect();
        DtmdpFile {
            states: (0..self.labels.len()).map(|x| self.lab(x)).collect(),
            actions: self.actions.clone(),
            kernel,
            costs,
            absorbing: vec![self.lab(self.n + 1)],
            delta_state: self.lab(self.n),
            alpha: self.alpha,
            rho: self.rho,
            w: self.w.clone(),
            shift: self.shift,
            survival_factor: self.survival_factor(),
            bounds: self.bounds.clone(),
            initial: self.lab(self.initial),
        }
    }
}

/// JSON form of a [`DtmdpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtmdpFile {
    pub states: Vec<Label>,
    pub actions: Vec<Vec<usize>>,
    /// `(x, a, y, T(y|x,a))`.
    pub kernel: Vec<(Label, usize, Label, f64)>,
    pub costs: Vec<Vec<(Label, usize, CostValue)>>,
    pub absorbing: Vec<Label>,
    pub delta_state: Label,
    pub alpha: f64,
    pub rho: f64,
    pub w: Vec<f64>,
    pub shift: f64,
    pub survival_factor: f64,
    pub bounds: Vec<f64>,
    pub initial: Label,
}
