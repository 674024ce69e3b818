//! The w-transformation.
//!
//! Given a drift certificate `(w, ρ, L)`, jumps are reweighted by
//! `w(y)/w(x)` and the drift slack `ρ - Σ_y w(y) q(y|x,a)/w(x)` is sent to an
//! extra absorbing cemetery state `δ` (index `|S|`). Costs are divided by `w`
//! and shifted by the common lower bound `c̲ ≤ 0` so that they are
//! nonnegative. The transformed process is discounted at `α - ρ`.
//!
//! The cemetery carries the running cost `-c̲`: with that choice the
//! `(α-ρ)`-discounted value of the shifted costs equals
//! `V/w - c̲/(α-ρ)` everywhere, including after absorption in `δ`.

use crate::conditions::{DriftCertificate, DRIFT_TOL};
use crate::model::{model_to_json, CostEntry, CtmdpModel, Label, ModelFile, ModelParts, RateEntry, RateKernel, StateId};
use crate::policy::{MarkovPolicy, StationaryPolicy};
use crate::transition::{feller_series, FellerOptions, QFunction, TransitionError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Default absolute tolerance for [`verify_lemma3`].
pub const LEMMA3_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("negative cemetery mass {mass} at state {state}, action {action}: drift condition violated")]
    NegativeDeltaMass { state: usize, action: usize, mass: f64 },
    #[error("certificate does not fit the model: {0}")]
    Domain(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

/// The w-transformed model on `S_δ = S ∪ {δ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedModel {
    n: usize,
    delta_label: String,
    labels: Vec<String>,
    actions: Vec<Vec<usize>>,
    rows: Vec<Vec<Vec<(usize, f64)>>>,
    exit: Vec<Vec<f64>>,
    source_exit: Vec<Vec<f64>>,
    costs_w: Vec<Vec<Vec<f64>>>,
    shift: f64,
    w: Vec<f64>,
    rho: f64,
    alpha: f64,
    bounds: Vec<f64>,
    initial: usize,
}

pub fn build_w_transform(m: &CtmdpModel, cert: &DriftCertificate) -> Result<TransformedModel, TransformError> {
    let n = m.n_states();
    let w = &cert.w;
    if w.len() != n {
        return Err(TransformError::Domain(format!("w has {} entries for {n} states", w.len())));
    }
    if let Some(x) = w.iter().position(|v| !(v.is_finite() && *v >= 1.0)) {
        return Err(TransformError::Domain(format!("w({x}) = {} < 1", w[x])));
    }
    if !(cert.rho > 0.0 && cert.rho < m.alpha()) {
        return Err(TransformError::Domain(format!("need 0 < rho < alpha, got rho = {}", cert.rho)));
    }
    let rho = cert.rho;
    let mut rows = Vec::with_capacity(n + 1);
    let mut exit = Vec::with_capacity(n + 1);
    let mut source_exit = Vec::with_capacity(n);
    for x in 0..n {
        let mut per_x = Vec::with_capacity(m.n_actions(x));
        let mut exit_x = Vec::with_capacity(m.n_actions(x));
        let mut src = Vec::with_capacity(m.n_actions(x));
        for k in 0..m.n_actions(x) {
            let drift = m.drift(x, k, w);
            if drift > rho * w[x] + DRIFT_TOL {
                return Err(TransformError::NegativeDeltaMass {
                    state: x,
                    action: m.action_index(x, k),
                    mass: rho - drift / w[x],
                });
            }
            let mut row: Vec<(usize, f64)> = m.rate_row(x, k).iter().map(|&(y, q)| (y, w[y] * q / w[x])).collect();
            let mass = (rho - drift / w[x]).max(0.0);
            if mass > 0.0 {
                row.push((n, mass));
            }
            exit_x.push(row.iter().map(|&(_, q)| q).sum());
            src.push(m.exit_rate(x, k));
            per_x.push(row);
        }
        rows.push(per_x);
        exit.push(exit_x);
        source_exit.push(src);
    }
    rows.push(vec![Vec::new()]);
    exit.push(vec![0.0]);

    let costs_w: Vec<Vec<Vec<f64>>> = (0..m.n_costs())
        .map(|i| {
            let mut table: Vec<Vec<f64>> = (0..n)
                .map(|x| (0..m.n_actions(x)).map(|k| m.cost(i, x, k) / w[x]).collect())
                .collect();
            table.push(vec![0.0]);
            table
        })
        .collect();
    let shift = costs_w
        .iter()
        .flatten()
        .flatten()
        .copied()
        .filter(|c| c.is_finite())
        .fold(0.0, f64::min);

    let mut delta_label = "delta".to_string();
    while m.state_index(&delta_label).is_some() {
        delta_label.insert(0, '_');
    }
    let mut labels = m.labels().to_vec();
    labels.push(delta_label.clone());
    let mut actions = m.action_sets().to_vec();
    actions.push(vec![0]);
    let residual = m.alpha() - rho;
    let bounds = m
        .constraint_bounds()
        .iter()
        .map(|d| d / w[m.initial_state()] - shift / residual)
        .collect();
    Ok(TransformedModel {
        n,
        delta_label,
        labels,
        actions,
        rows,
        exit,
        source_exit,
        costs_w,
        shift,
        w: w.clone(),
        rho,
        alpha: m.alpha(),
        bounds,
        initial: m.initial_state(),
    })
}

impl TransformedModel {
    /// `|S| + 1`.
    pub fn n_states(&self) -> usize {
        self.n + 1
    }

    /// `|S|`.
    pub fn n_original(&self) -> usize {
        self.n
    }

    /// Index of the cemetery `δ`.
    pub fn delta(&self) -> usize {
        self.n
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn delta_label(&self) -> &str {
        &self.delta_label
    }

    pub fn actions(&self, x: usize) -> &[usize] {
        &self.actions[x]
    }

    pub fn n_actions(&self, x: usize) -> usize {
        self.actions[x].len()
    }

    pub fn action_index(&self, x: usize, k: usize) -> usize {
        self.actions[x][k]
    }

    /// Off-diagonal `q^w(y|x,a)` over `S_δ`, `δ` last.
    pub fn rate_row(&self, x: usize, k: usize) -> &[(usize, f64)] {
        &self.rows[x][k]
    }

    /// `q^w({δ}|x,a)`.
    pub fn delta_mass(&self, x: usize, k: usize) -> f64 {
        self.rows[x][k].iter().find(|&&(y, _)| y == self.n).map_or(0.0, |&(_, q)| q)
    }

    /// `q^w_x(a)`, equal to `ρ + q_x(a)` on `S` and 0 at `δ`.
    pub fn exit_rate(&self, x: usize, k: usize) -> f64 {
        self.exit[x][k]
    }

    /// `q_x(a)` of the source model.
    pub fn source_exit_rate(&self, x: usize, k: usize) -> f64 {
        self.source_exit[x][k]
    }

    pub fn n_costs(&self) -> usize {
        self.costs_w.len()
    }

    /// `c_i^w = c_i / w` (0 at `δ`).
    pub fn cost_w(&self, i: usize, x: usize, k: usize) -> f64 {
        self.costs_w[i][x][k]
    }

    /// `c̃_i^w = c_i^w - c̲`; `-c̲` at `δ`.
    pub fn shifted_cost(&self, i: usize, x: usize, k: usize) -> f64 {
        self.costs_w[i][x][k] - self.shift
    }

    pub fn is_forbidden(&self, x: usize, k: usize) -> bool {
        x < self.n && self.costs_w[0][x][k] == f64::INFINITY
    }

    /// `c̲`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `α - ρ`.
    pub fn residual_discount(&self) -> f64 {
        self.alpha - self.rho
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// `b_j = d_j / w(x₀) - c̲/(α-ρ)`.
    pub fn constraint_bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// Dense `q^w_π` on `S_δ`. The row of `δ` is zero.
    pub fn policy_generator(&self, p: &StationaryPolicy) -> DMatrix<f64> {
        let dim = self.n + 1;
        let mut g = DMatrix::zeros(dim, dim);
        for x in 0..self.n {
            for (k, &pk) in p.weights(x).iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                for &(y, q) in &self.rows[x][k] {
                    g[(x, y)] += pk * q;
                }
            }
            let out: f64 = (0..dim).filter(|&y| y != x).map(|y| g[(x, y)]).sum();
            g[(x, x)] = -out;
        }
        g
    }

    /// The transformed model as an ordinary CTMDP on `S_δ`, discounted at
    /// `α - ρ` with shifted costs and mapped constraint bounds.
    pub fn to_model(&self) -> CtmdpModel {
        let mut entries = Vec::new();
        for x in 0..=self.n {
            for k in 0..self.actions[x].len() {
                for &(y, rate) in &self.rows[x][k] {
                    entries.push(RateEntry {
                        x,
                        action: self.actions[x][k],
                        y,
                        rate,
                    });
                }
            }
        }
        let costs = (0..self.n_costs())
            .map(|i| {
                (0..=self.n)
                    .flat_map(|x| {
                        (0..self.actions[x].len()).map(move |k| CostEntry {
                            x,
                            action: self.actions[x][k],
                            value: self.shifted_cost(i, x, k),
                        })
                    })
                    .collect()
            })
            .collect();
        CtmdpModel::new(ModelParts {
            states: self
                .labels
                .iter()
                .enumerate()
                .map(|(index, l)| StateId {
                    index,
                    label: Some(l.clone()),
                })
                .collect(),
            action_sets: self.actions.clone(),
            rates: RateKernel { entries },
            costs,
            alpha: self.residual_discount(),
            constraint_bounds: self.bounds.clone(),
            initial_state: self.initial,
        })
        .expect("transformed model is valid by construction")
    }

    /// JSON form: the model schema plus `delta_state` and `shift`.
    pub fn to_json(&self) -> ModelFile {
        let mut file = model_to_json(&self.to_model());
        file.delta_state = Some(Label::Text(self.delta_label.clone()));
        file.shift = Some(self.shift);
        file
    }
}

/// `V(x) = w(x) (Ṽ(x) + c̲/(α-ρ))` for `x ∈ S`.
pub fn back_transform_value(v: &[f64], w: &[f64], shift: f64, residual_discount: f64) -> Vec<f64> {
    w.iter()
        .zip(v)
        .map(|(wx, vx)| wx * (vx + shift / residual_discount))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Row {
    pub state: usize,
    pub t: f64,
    pub target: usize,
    pub transformed: f64,
    pub reweighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub rows: Vec<Lemma3Row>,
    pub max_residual: f64,
}

impl Lemma3Report {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

/// Compares `p_{q^w}(0,x,t,Γ)` with `e^{-ρt}/w(x) Σ_{y∈Γ} w(y) p_q(0,x,t,y)`
/// for every state, time on the grid and target set `Γ ⊆ S`.
pub fn verify_lemma3(
    m: &CtmdpModel,
    cert: &DriftCertificate,
    policy: &MarkovPolicy,
    t_grid: &[f64],
    targets: &[Vec<usize>],
) -> Result<Lemma3Report, TransformError> {
    policy.check(m).map_err(|e| TransformError::Domain(e.to_string()))?;
    if let Some(y) = targets.iter().flatten().find(|&&y| y >= m.n_states()) {
        return Err(TransformError::Domain(format!("target state {y} outside S")));
    }
    let tm = build_w_transform(m, cert)?;
    let q = QFunction::from_markov_policy(m, policy);
    let qw = QFunction::transformed_markov(&tm, policy);
    let opts = FellerOptions::default();
    let w = &cert.w;
    let mut rows = Vec::new();
    let mut max_residual = 0.0_f64;
    for &t in t_grid {
        let p = feller_series(&q, 0.0, t, &opts)?.total;
        let pw = feller_series(&qw, 0.0, t, &opts)?.total;
        let decay = (-cert.rho * t).exp();
        for x in 0..m.n_states() {
            for (j, gamma) in targets.iter().enumerate() {
                let transformed: f64 = gamma.iter().map(|&y| pw[(x, y)]).sum();
                let reweighted = decay / w[x] * gamma.iter().map(|&y| w[y] * p[(x, y)]).sum::<f64>();
                max_residual = max_residual.max((transformed - reweighted).abs());
                rows.push(Lemma3Row {
                    state: x,
                    t,
                    target: j,
                    transformed,
                    reweighted,
                });
            }
        }
    }
    Ok(Lemma3Report { rows, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_family, ModelFamily, RateLaw};

    fn frozen(costs: Vec<f64>, alpha: f64) -> CtmdpModel {
        let n = costs.len();
        CtmdpModel::new(ModelParts {
            states: (0..n).map(|index| StateId { index, label: None }).collect(),
            action_sets: vec![vec![0]; n],
            rates: RateKernel::default(),
            costs: vec![costs
                .iter()
                .enumerate()
                .map(|(x, &value)| CostEntry { x, action: 0, value })
                .collect()],
            alpha,
            constraint_bounds: vec![],
            initial_state: 0,
        })
        .unwrap()
    }

    fn cert(w: Vec<f64>, rho: f64, l: f64) -> DriftCertificate {
        DriftCertificate { w, rho, l }
    }

    #[test]
    fn zero_kernel() {
        let m = frozen(vec![5.0, 5.0], 1.0);
        let tm = build_w_transform(&m, &cert(vec![1.0, 1.0], 0.5, 1e-6)).unwrap();
        assert_eq!(tm.delta_mass(0, 0), 0.5);
        assert_eq!(tm.exit_rate(0, 0), 0.5);
        assert_eq!(tm.shift(), 0.0);
        assert_eq!(tm.shifted_cost(0, 1, 0), 5.0);
        assert_eq!(tm.exit_rate(tm.delta(), 0), 0.0);
    }

    #[test]
    fn pure_birth_rates() {
        let f = ModelFamily::pure_birth(RateLaw::linear(2.0), 6);
        let m = build_family(&f, &[vec![0.0; 6]], 2.0, vec![], 1).unwrap();
        let tm = build_w_transform(&m, &cert(vec![1.0; 6], 1.0, 1e-6)).unwrap();
        for x in 0..5 {
            let label = x as f64 + 1.0;
            assert_eq!(tm.rate_row(x, 0)[0], (x + 1, 2.0 * label));
            assert_eq!(tm.delta_mass(x, 0), 1.0);
            assert_eq!(tm.exit_rate(x, 0), 2.0 * label + 1.0);
        }
    }

    #[test]
    fn constant_negative_cost_shift() {
        let m = frozen(vec![-2.0, -2.0], 1.0);
        let tm = build_w_transform(&m, &cert(vec![1.0, 1.0], 0.5, 2.0)).unwrap();
        assert_eq!(tm.shift(), -2.0);
        assert_eq!(tm.shifted_cost(0, 0, 0), 0.0);
        assert_eq!(tm.shifted_cost(0, tm.delta(), 0), 2.0);
    }

    #[test]
    fn back_transform_algebra() {
        let v = back_transform_value(&[0.0, 0.0], &[1.0, 3.0], -0.5, 0.5);
        assert_eq!(v, vec![-1.0, -3.0]);
        assert_eq!(back_transform_value(&[5.0], &[1.0], 0.0, 0.5), vec![5.0]);
    }

    #[test]
    fn drift_violation_is_reported() {
        let f = ModelFamily::pure_birth(RateLaw::linear(2.0), 4);
        let m = build_family(&f, &[vec![0.0; 4]], 2.0, vec![], 1).unwrap();
        // w growing fast: drift at x=1 is 2*(4-1) = 6 > rho * 1
        let w = vec![1.0, 4.0, 16.0, 64.0];
        let err = build_w_transform(&m, &cert(w, 1.0, 1e-6)).unwrap_err();
        assert!(matches!(err, TransformError::NegativeDeltaMass { state: 0, .. }));
    }

    #[test]
    fn json_round_trip_keeps_delta() {
        let m = frozen(vec![1.0], 1.0);
        let tm = build_w_transform(&m, &cert(vec![1.0], 0.5, 1e-6)).unwrap();
        let text = serde_json::to_string(&tm.to_json()).unwrap();
        let back = crate::model::parse_model(&text, None).unwrap().model;
        assert_eq!(back.n_states(), 2);
        assert_eq!(back.label(1), "delta");
        assert_eq!(back.alpha(), 0.5);
        assert_eq!(back.rate(0, 0, 1), 0.5);
    }

    #[test]
    fn lemma3_at_time_zero() {
        let m = frozen(vec![1.0, 2.0], 1.0);
        let p = MarkovPolicy::stationary(StationaryPolicy::uniform(&m));
        let r = verify_lemma3(&m, &cert(vec![1.0, 2.0], 0.5, 1e-6), &p, &[0.0], &[vec![0], vec![0, 1]]).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }
}
