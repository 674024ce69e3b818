//! CTMDP data model.
//!
//! A model is a finite state space with per-state finite action sets, a
//! sparse conservative rate kernel, `N + 1` cost tables and a discount rate.
//! Off-diagonal rates are stored; the diagonal `q_x(a)` is always derived
//! from them, so every row of the generator sums to zero by construction.
//!
//! Internally states are dense indices `0..n` and actions are addressed by
//! their *position* `k` inside `A(x)`. The user-facing action index is
//! recovered with [`CtmdpModel::action_index`].

mod family;
mod json;

pub use family::{build_family, Boundary, FamilyKind, ModelFamily, RateLaw};
pub use json::{load_model, load_model_file, model_to_json, parse_model, CostValue, FamilyFile, Label, LoadedModel, ModelFile};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

/// State identifier: dense index plus an optional presentation label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateId {
    pub index: usize,
    pub label: Option<String>,
}

/// One off-diagonal rate `q(y | x, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub x: usize,
    pub action: usize,
    pub y: usize,
    pub rate: f64,
}

/// Sparse off-diagonal rate table. The diagonal is implied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateKernel {
    pub entries: Vec<RateEntry>,
}

/// One cost value `c_i(x, a)`; `f64::INFINITY` marks a forbidden action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub x: usize,
    pub action: usize,
    pub value: f64,
}

/// Raw, unvalidated model description. Entries not listed in a cost table
/// default to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub states: Vec<StateId>,
    pub action_sets: Vec<Vec<usize>>,
    pub rates: RateKernel,
    pub costs: Vec<Vec<CostEntry>>,
    pub alpha: f64,
    pub constraint_bounds: Vec<f64>,
    pub initial_state: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyStateSpace,
    NonContiguousIndex,
    DuplicateLabel,
    EmptyActionSet,
    DuplicateAction,
    StateOutOfRange,
    DiagonalEntry,
    NegativeRate,
    NonFiniteRate,
    OutsideGraph,
    DuplicateEntry,
    InvalidCost,
    MissingCostTable,
    InvalidDiscount,
    BoundsMismatch,
    InvalidBound,
    InvalidInitialState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Result of [`validate_model`]. Empty `violations` means valid.
///
/// `flagged` lists `(x, action index)` pairs whose `c_0` is `+inf`. They stay
/// in the model but are never selected by the solvers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub flagged: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid model: {0}")]
    Validation(ValidationReport),
    #[error("invalid family: {0}")]
    Family(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Checks every structural invariant of a raw model description.
pub fn validate_model(parts: &ModelParts) -> ValidationReport {
    use ViolationKind::*;
    let mut report = ValidationReport::default();
    let n = parts.states.len();
    if n == 0 {
        report.push(EmptyStateSpace, "state space is empty");
    }
    let mut seen_labels = HashSet::new();
    for (i, s) in parts.states.iter().enumerate() {
        if s.index != i {
            report.push(
                NonContiguousIndex,
                format!("state at position {i} has index {}", s.index),
            );
        }
        if let Some(label) = &s.label {
            if !seen_labels.insert(label.as_str()) {
                report.push(DuplicateLabel, format!("duplicate state label {label:?}"));
            }
        }
    }
    if parts.action_sets.len() != n {
        report.push(
            StateOutOfRange,
            format!("{} action sets for {n} states", parts.action_sets.len()),
        );
    }
    let mut graph: HashSet<(usize, usize)> = HashSet::new();
    for (x, acts) in parts.action_sets.iter().enumerate() {
        if acts.is_empty() {
            report.push(EmptyActionSet, format!("A({x}) is empty"));
        }
        for &a in acts {
            if !graph.insert((x, a)) {
                report.push(DuplicateAction, format!("action {a} repeated in A({x})"));
            }
        }
    }

    let mut rate_keys = HashSet::new();
    for e in &parts.rates.entries {
        if e.x >= n || e.y >= n {
            report.push(
                StateOutOfRange,
                format!("rate entry ({}, {}, {}) references an unknown state", e.x, e.action, e.y),
            );
            continue;
        }
        if e.y == e.x {
            report.push(
                DiagonalEntry,
                format!("diagonal entry supplied at ({}, {})", e.x, e.action),
            );
        }
        if !e.rate.is_finite() {
            report.push(
                NonFiniteRate,
                format!("rate ({}, {}, {}) is not finite", e.x, e.action, e.y),
            );
        } else if e.rate < 0.0 {
            report.push(
                NegativeRate,
                format!("negative rate {} at ({}, {}, {})", e.rate, e.x, e.action, e.y),
            );
        }
        if !graph.contains(&(e.x, e.action)) {
            report.push(
                OutsideGraph,
                format!("rate entry outside graph K at ({}, {})", e.x, e.action),
            );
        }
        if !rate_keys.insert((e.x, e.action, e.y)) {
            report.push(
                DuplicateEntry,
                format!("duplicate rate entry ({}, {}, {})", e.x, e.action, e.y),
            );
        }
    }

    if parts.costs.is_empty() {
        report.push(MissingCostTable, "at least one cost table (c_0) is required");
    }
    for (i, table) in parts.costs.iter().enumerate() {
        let mut keys = HashSet::new();
        for e in table {
            if e.x >= n {
                report.push(
                    StateOutOfRange,
                    format!("cost c_{i} entry references unknown state {}", e.x),
                );
                continue;
            }
            if !graph.contains(&(e.x, e.action)) {
                report.push(
                    OutsideGraph,
                    format!("cost c_{i} entry outside graph K at ({}, {})", e.x, e.action),
                );
            }
            if e.value.is_nan() || e.value == f64::NEG_INFINITY {
                report.push(
                    InvalidCost,
                    format!("cost c_{i}({}, {}) = {} is not in (-inf, +inf]", e.x, e.action, e.value),
                );
            }
            if !keys.insert((e.x, e.action)) {
                report.push(
                    DuplicateEntry,
                    format!("duplicate cost c_{i} entry ({}, {})", e.x, e.action),
                );
            }
            if i == 0 && e.value == f64::INFINITY && graph.contains(&(e.x, e.action)) {
                report.flagged.push((e.x, e.action));
            }
        }
    }
    if !(parts.alpha.is_finite() && parts.alpha > 0.0) {
        report.push(InvalidDiscount, format!("alpha = {} must be finite and > 0", parts.alpha));
    }
    if !parts.costs.is_empty() && parts.constraint_bounds.len() != parts.costs.len() - 1 {
        report.push(
            BoundsMismatch,
            format!(
                "{} constraint bounds for {} constraint costs",
                parts.constraint_bounds.len(),
                parts.costs.len() - 1
            ),
        );
    }
    for (j, d) in parts.constraint_bounds.iter().enumerate() {
        if !d.is_finite() {
            report.push(InvalidBound, format!("bound d_{} = {d} is not finite", j + 1));
        }
    }
    if parts.initial_state >= n {
        report.push(
            InvalidInitialState,
            format!("initial state {} out of range", parts.initial_state),
        );
    }
    report.flagged.sort_unstable();
    report
}

/// A validated CTMDP. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmdpModel {
    labels: Vec<String>,
    actions: Vec<Vec<usize>>,
    rows: Vec<Vec<Vec<(usize, f64)>>>,
    exit: Vec<Vec<f64>>,
    costs: Vec<Vec<Vec<f64>>>,
    alpha: f64,
    bounds: Vec<f64>,
    initial: usize,
}

impl CtmdpModel {
    pub fn new(parts: ModelParts) -> Result<Self, ModelError> {
        let report = validate_model(&parts);
        if !report.is_valid() {
            return Err(ModelError::Validation(report));
        }
        let n = parts.states.len();
        let labels = parts
            .states
            .iter()
            .map(|s| s.label.clone().unwrap_or_else(|| s.index.to_string()))
            .collect::<Vec<_>>();
        let pos: HashMap<(usize, usize), usize> = parts
            .action_sets
            .iter()
            .enumerate()
            .flat_map(|(x, acts)| acts.iter().enumerate().map(move |(k, &a)| ((x, a), k)))
            .collect();

        let mut rows: Vec<Vec<Vec<(usize, f64)>>> = parts
            .action_sets
            .iter()
            .map(|acts| vec![Vec::new(); acts.len()])
            .collect();
        for e in &parts.rates.entries {
            if e.rate > 0.0 {
                rows[e.x][pos[&(e.x, e.action)]].push((e.y, e.rate));
            }
        }
        for row in rows.iter_mut().flatten() {
            row.sort_by_key(|&(y, _)| y);
        }
        let exit = rows
            .iter()
            .map(|per_x| per_x.iter().map(|r| r.iter().map(|&(_, q)| q).sum()).collect())
            .collect();

        let costs = parts
            .costs
            .iter()
            .map(|table| {
                let mut dense: Vec<Vec<f64>> = parts
                    .action_sets
                    .iter()
                    .map(|acts| vec![0.0; acts.len()])
                    .collect();
                for e in table {
                    dense[e.x][pos[&(e.x, e.action)]] = e.value;
                }
                dense
            })
            .collect();
        debug_assert_eq!(labels.len(), n);
        Ok(Self {
            labels,
            actions: parts.action_sets,
            rows,
            exit,
            costs,
            alpha: parts.alpha,
            bounds: parts.constraint_bounds,
            initial: parts.initial_state,
        })
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn states(&self) -> Vec<StateId> {
        self.labels
            .iter()
            .enumerate()
            .map(|(index, l)| StateId {
                index,
                label: Some(l.clone()),
            })
            .collect()
    }

    /// `A(x)` as user-facing action indices.
    pub fn actions(&self, x: usize) -> &[usize] {
        &self.actions[x]
    }

    pub fn action_sets(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn n_actions(&self, x: usize) -> usize {
        self.actions[x].len()
    }

    /// Action index of the `k`-th action of `A(x)`.
    pub fn action_index(&self, x: usize, k: usize) -> usize {
        self.actions[x][k]
    }

    /// Position of action index `a` inside `A(x)`.
    pub fn action_position(&self, x: usize, a: usize) -> Option<usize> {
        self.actions[x].iter().position(|&b| b == a)
    }

    /// Off-diagonal rates `(y, q(y|x,a))` for the `k`-th action, sorted by `y`.
    pub fn rate_row(&self, x: usize, k: usize) -> &[(usize, f64)] {
        &self.rows[x][k]
    }

    /// `q(y | x, a)` including the derived diagonal.
    pub fn rate(&self, x: usize, k: usize, y: usize) -> f64 {
        if x == y {
            -self.exit[x][k]
        } else {
            self.rows[x][k]
                .iter()
                .find(|&&(z, _)| z == y)
                .map_or(0.0, |&(_, q)| q)
        }
    }

    /// `q_x(a) = q(S \ {x} | x, a)`.
    pub fn exit_rate(&self, x: usize, k: usize) -> f64 {
        self.exit[x][k]
    }

    /// `q̄_x = max_a q_x(a)`.
    pub fn max_exit_rate(&self, x: usize) -> f64 {
        self.exit[x].iter().copied().fold(0.0, f64::max)
    }

    /// Number of cost tables, `N + 1`.
    pub fn n_costs(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, i: usize, x: usize, k: usize) -> f64 {
        self.costs[i][x][k]
    }

    /// Whether the `k`-th action at `x` has `c_0 = +inf`.
    pub fn is_forbidden(&self, x: usize, k: usize) -> bool {
        self.costs[0][x][k] == f64::INFINITY
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn constraint_bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// Iterates the graph `K` as `(x, k)` pairs.
    pub fn graph(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .flat_map(|(x, acts)| (0..acts.len()).map(move |k| (x, k)))
    }

    /// `Σ_y f(y) q(y|x,a)` for the `k`-th action.
    pub fn drift(&self, x: usize, k: usize, f: &[f64]) -> f64 {
        self.rows[x][k].iter().map(|&(y, q)| f[y] * q).sum::<f64>() - f[x] * self.exit[x][k]
    }

    /// Recovers the raw description (all rates and all cost entries).
    pub fn to_parts(&self) -> ModelParts {
        let mut rates = Vec::new();
        for (x, k) in self.graph() {
            for &(y, rate) in &self.rows[x][k] {
                rates.push(RateEntry {
                    x,
                    action: self.actions[x][k],
                    y,
                    rate,
                });
            }
        }
        let costs = self
            .costs
            .iter()
            .map(|table| {
                self.graph()
                    .map(|(x, k)| CostEntry {
                        x,
                        action: self.actions[x][k],
                        value: table[x][k],
                    })
                    .collect()
            })
            .collect();
        ModelParts {
            states: self.states(),
            action_sets: self.actions.clone(),
            rates: RateKernel { entries: rates },
            costs,
            alpha: self.alpha,
            constraint_bounds: self.bounds.clone(),
            initial_state: self.initial,
        }
    }

    /// Distinct states reachable from `x0` under any action.
    pub fn reachable_from(&self, x0: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([x0]);
        let mut stack = vec![x0];
        while let Some(x) = stack.pop() {
            for row in &self.rows[x] {
                for &(y, _) in row {
                    if seen.insert(y) {
                        stack.push(y);
                    }
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> ModelParts {
        ModelParts {
            states: vec![
                StateId { index: 0, label: Some("a".into()) },
                StateId { index: 1, label: Some("b".into()) },
            ],
            action_sets: vec![vec![0, 1], vec![0]],
            rates: RateKernel {
                entries: vec![
                    RateEntry { x: 0, action: 0, y: 1, rate: 3.0 },
                    RateEntry { x: 0, action: 1, y: 1, rate: 0.5 },
                    RateEntry { x: 1, action: 0, y: 0, rate: 1.0 },
                ],
            },
            costs: vec![vec![CostEntry { x: 0, action: 0, value: 2.0 }]],
            alpha: 1.0,
            constraint_bounds: vec![],
            initial_state: 0,
        }
    }

    #[test]
    fn valid_model_has_empty_report() {
        let report = validate_model(&two_state());
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn diagonal_entry_is_reported() {
        let mut p = two_state();
        p.rates.entries.push(RateEntry { x: 1, action: 0, y: 1, rate: 1.0 });
        let report = validate_model(&p);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::DiagonalEntry && v.message.contains("diagonal entry supplied")));
    }

    #[test]
    fn cost_outside_graph_is_reported() {
        let mut p = two_state();
        p.costs[0].push(CostEntry { x: 1, action: 7, value: 1.0 });
        let report = validate_model(&p);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::OutsideGraph && v.message.contains("outside graph K")));
    }

    #[test]
    fn violations_are_collected_not_short_circuited() {
        let mut p = two_state();
        p.alpha = 0.0;
        p.action_sets[1].clear();
        p.initial_state = 9;
        let report = validate_model(&p);
        let kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::InvalidDiscount));
        assert!(kinds.contains(&ViolationKind::EmptyActionSet));
        assert!(kinds.contains(&ViolationKind::InvalidInitialState));
    }

    #[test]
    fn diagonal_is_derived_and_rows_sum_to_zero() {
        let m = CtmdpModel::new(two_state()).unwrap();
        for (x, k) in m.graph() {
            let total: f64 = (0..m.n_states()).map(|y| m.rate(x, k, y)).sum();
            assert_eq!(total, 0.0);
        }
        assert_eq!(m.exit_rate(0, 0), 3.0);
        assert_eq!(m.max_exit_rate(0), 3.0);
        assert_eq!(m.cost(0, 0, 0), 2.0);
        assert_eq!(m.cost(0, 0, 1), 0.0);
    }

    #[test]
    fn infinite_cost_is_flagged_not_rejected() {
        let mut p = two_state();
        p.costs[0].push(CostEntry { x: 0, action: 1, value: f64::INFINITY });
        let report = validate_model(&p);
        assert!(report.is_valid());
        assert_eq!(report.flagged, vec![(0, 1)]);
        let m = CtmdpModel::new(p).unwrap();
        assert!(m.is_forbidden(0, 1));
    }

    #[test]
    fn negative_infinite_cost_is_invalid() {
        let mut p = two_state();
        p.costs[0][0].value = f64::NEG_INFINITY;
        assert!(!validate_model(&p).is_valid());
    }

    #[test]
    fn parts_round_trip() {
        let m = CtmdpModel::new(two_state()).unwrap();
        let again = CtmdpModel::new(m.to_parts()).unwrap();
        assert_eq!(m, again);
    }
}
