//! Parametric, truncated model families (uncontrolled, one action per state).
//!
//! States carry the labels `1..=M` and the dense indices `0..M`.

use super::{CostEntry, CtmdpModel, ModelError, ModelParts, RateEntry, RateKernel, StateId};
use serde::{Deserialize, Serialize};

/// `rate(x) = coef * x^power` for a state label `x >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLaw {
    pub coef: f64,
    #[serde(default = "one")]
    pub power: f64,
}

fn one() -> f64 {
    1.0
}

impl RateLaw {
    pub fn linear(coef: f64) -> Self {
        Self { coef, power: 1.0 }
    }

    pub fn at(&self, x: usize) -> f64 {
        self.coef * (x as f64).powf(self.power)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    PureBirth {
        birth: RateLaw,
    },
    BirthDeath {
        birth: RateLaw,
        death: RateLaw,
    },
    /// `(from label, to label, rate)` with labels in `1..=M`.
    Explicit {
        rates: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// All rates vanish at the top state.
    #[default]
    Absorbing,
    /// Births are suppressed at the top state; deaths are kept.
    Reflecting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    pub kind: FamilyKind,
    pub truncation: usize,
    pub boundary: Boundary,
}

impl ModelFamily {
    pub fn pure_birth(birth: RateLaw, truncation: usize) -> Self {
        Self {
            kind: FamilyKind::PureBirth { birth },
            truncation,
            boundary: Boundary::Absorbing,
        }
    }

    /// Off-diagonal transitions `(from label, to label, rate)` of the truncated chain.
    pub fn transitions(&self) -> Result<Vec<(usize, usize, f64)>, ModelError> {
        let m = self.truncation;
        if m < 2 {
            return Err(ModelError::Family(format!("truncation level {m} < 2")));
        }
        let check = |law: &RateLaw| -> Result<(), ModelError> {
            if law.coef.is_finite() && law.coef >= 0.0 && law.power.is_finite() {
                Ok(())
            } else {
                Err(ModelError::Family(format!("bad rate law {law:?}")))
            }
        };
        let mut out = Vec::new();
        match &self.kind {
            FamilyKind::PureBirth { birth } => {
                check(birth)?;
                for x in 1..m {
                    out.push((x, x + 1, birth.at(x)));
                }
            }
            FamilyKind::BirthDeath { birth, death } => {
                check(birth)?;
                check(death)?;
                for x in 1..=m {
                    let top = x == m;
                    if !top {
                        out.push((x, x + 1, birth.at(x)));
                    }
                    if x > 1 && (!top || self.boundary == Boundary::Reflecting) {
                        out.push((x, x - 1, death.at(x)));
                    }
                }
            }
            FamilyKind::Explicit { rates } => {
                for &(x, y, r) in rates {
                    if x == 0 || y == 0 || x > m || y > m || x == y {
                        return Err(ModelError::Family(format!(
                            "explicit rate ({x}, {y}) outside labels 1..={m} or diagonal"
                        )));
                    }
                    if !(r.is_finite() && r >= 0.0) {
                        return Err(ModelError::Family(format!("explicit rate {r} invalid")));
                    }
                    out.push((x, y, r));
                }
            }
        }
        out.retain(|&(_, _, r)| r > 0.0);
        Ok(out)
    }

    /// Rate at which the untruncated chain would leave the top state
    /// upwards. Used by leaky truncations, where this mass is discarded.
    pub fn boundary_outflow(&self) -> f64 {
        let m = self.truncation;
        match &self.kind {
            FamilyKind::PureBirth { birth } | FamilyKind::BirthDeath { birth, .. } => birth.at(m),
            FamilyKind::Explicit { .. } => 0.0,
        }
    }
}

/// Instantiates a family as a single-action model.
///
/// `costs[i][x]` is `c_i` at the state with index `x` (label `x + 1`).
pub fn build_family(
    family: &ModelFamily,
    costs: &[Vec<f64>],
    alpha: f64,
    bounds: Vec<f64>,
    initial_label: usize,
) -> Result<CtmdpModel, ModelError> {
    let m = family.truncation;
    let transitions = family.transitions()?;
    if costs.iter().any(|c| c.len() != m) {
        return Err(ModelError::Family(format!("cost tables must have {m} entries")));
    }
    if initial_label == 0 || initial_label > m {
        return Err(ModelError::Family(format!("initial label {initial_label} outside 1..={m}")));
    }
    let parts = ModelParts {
        states: (0..m)
            .map(|index| StateId {
                index,
                label: Some((index + 1).to_string()),
            })
            .collect(),
        action_sets: vec![vec![0]; m],
        rates: RateKernel {
            entries: transitions
                .into_iter()
                .map(|(x, y, rate)| RateEntry {
                    x: x - 1,
                    action: 0,
                    y: y - 1,
                    rate,
                })
                .collect(),
        },
        costs: costs
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(x, &value)| CostEntry { x, action: 0, value })
                    .collect()
            })
            .collect(),
        alpha,
        constraint_bounds: bounds,
        initial_state: initial_label - 1,
    };
    CtmdpModel::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_costs(m: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; m]]
    }

    #[test]
    fn pure_birth_linear_rates() {
        let f = ModelFamily::pure_birth(RateLaw::linear(2.0), 4);
        let m = build_family(&f, &zero_costs(4), 2.0, vec![], 1).unwrap();
        assert_eq!(m.n_states(), 4);
        assert_eq!(m.labels(), ["1", "2", "3", "4"]);
        assert_eq!(m.rate_row(0, 0), [(1, 2.0)]);
        assert_eq!(m.rate_row(1, 0), [(2, 4.0)]);
        assert_eq!(m.rate_row(2, 0), [(3, 6.0)]);
        assert!(m.rate_row(3, 0).is_empty());
        for x in 0..4 {
            assert_eq!(m.exit_rate(x, 0), if x < 3 { 2.0 * (x + 1) as f64 } else { 0.0 });
        }
    }

    #[test]
    fn pure_birth_quadratic_rates() {
        let f = ModelFamily::pure_birth(RateLaw { coef: 1.0, power: 2.0 }, 5);
        let m = build_family(&f, &zero_costs(5), 1.0, vec![], 1).unwrap();
        let rates: Vec<f64> = (0..4).map(|x| m.rate_row(x, 0)[0].1).collect();
        assert_eq!(rates, [1.0, 4.0, 9.0, 16.0]);
        assert_eq!(m.exit_rate(4, 0), 0.0);
    }

    #[test]
    fn birth_death_with_zero_rates_is_frozen() {
        let f = ModelFamily {
            kind: FamilyKind::BirthDeath {
                birth: RateLaw::linear(0.0),
                death: RateLaw::linear(0.0),
            },
            truncation: 3,
            boundary: Boundary::Absorbing,
        };
        let m = build_family(&f, &zero_costs(3), 1.0, vec![], 2).unwrap();
        assert!((0..3).all(|x| m.exit_rate(x, 0) == 0.0));
    }

    #[test]
    fn reflecting_keeps_deaths_at_top() {
        let mut f = ModelFamily {
            kind: FamilyKind::BirthDeath {
                birth: RateLaw::linear(1.0),
                death: RateLaw::linear(0.5),
            },
            truncation: 3,
            boundary: Boundary::Reflecting,
        };
        let m = build_family(&f, &zero_costs(3), 1.0, vec![], 1).unwrap();
        assert_eq!(m.rate_row(2, 0), [(1, 1.5)]);
        f.boundary = Boundary::Absorbing;
        let m = build_family(&f, &zero_costs(3), 1.0, vec![], 1).unwrap();
        assert!(m.rate_row(2, 0).is_empty());
    }

    #[test]
    fn truncation_below_two_is_rejected() {
        let f = ModelFamily::pure_birth(RateLaw::linear(2.0), 1);
        assert!(matches!(
            build_family(&f, &zero_costs(1), 1.0, vec![], 1),
            Err(ModelError::Family(_))
        ));
    }

    #[test]
    fn truncation_levels_embed() {
        let law = RateLaw::linear(2.0);
        for m in 2..10 {
            let small = ModelFamily::pure_birth(law, m).transitions().unwrap();
            let big = ModelFamily::pure_birth(law, m + 1).transitions().unwrap();
            assert!(small.iter().all(|t| big.contains(t)));
        }
    }
}
