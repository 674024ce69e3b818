//! Seeded random instances with valid drift certificates, and small bundled
//! models with closed-form answers.

use crate::conditions::{attained_drift, attained_lower_bound, DriftCertificate, L_MIN};
use crate::model::{build_family, CostEntry, CtmdpModel, ModelFamily, ModelParts, RateEntry, RateKernel, RateLaw, StateId};
use crate::policy::DeterministicPolicy;
use crate::resolvent::ctmdp_value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub n_constraints: usize,
    pub negative_costs: bool,
    /// Probability that a given off-diagonal rate is present.
    pub density: f64,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            max_states: 6,
            max_actions: 3,
            n_constraints: 1,
            negative_costs: true,
            density: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub model: CtmdpModel,
    pub cert: DriftCertificate,
}

/// A random model with a valid certificate. Constraint bounds are set above
/// the constraint costs of one random deterministic policy, so the
/// constrained problem from state 0 is feasible.
pub fn random_instance(seed: u64, shape: InstanceShape) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if shape.max_states >= 2 {
        rng.random_range(2..=shape.max_states)
    } else {
        1
    };
    let action_sets: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..rng.random_range(1..=shape.max_actions.max(1))).collect())
        .collect();
    let mut entries = Vec::new();
    for (x, acts) in action_sets.iter().enumerate() {
        for &a in acts {
            for y in (0..n).filter(|&y| y != x) {
                if rng.random::<f64>() < shape.density {
                    entries.push(RateEntry {
                        x,
                        action: a,
                        y,
                        rate: rng.random_range(0.1..3.0),
                    });
                }
            }
        }
    }
    let low = if shape.negative_costs { -2.0 } else { 0.0 };
    let costs: Vec<Vec<CostEntry>> = (0..=shape.n_constraints)
        .map(|_| {
            action_sets
                .iter()
                .enumerate()
                .flat_map(|(x, acts)| acts.iter().map(move |&a| (x, a)))
                .map(|(x, action)| CostEntry {
                    x,
                    action,
                    value: rng.random_range(low..5.0),
                })
                .collect()
        })
        .collect();
    let w: Vec<f64> = if rng.random::<f64>() < 0.3 {
        vec![1.0; n]
    } else {
        (0..n).map(|_| rng.random_range(1.0..4.0)).collect()
    };
    let mut parts = ModelParts {
        states: (0..n).map(|index| StateId { index, label: None }).collect(),
        action_sets,
        rates: RateKernel { entries },
        costs,
        alpha: 1.0,
        constraint_bounds: vec![0.0; shape.n_constraints],
        initial_state: 0,
    };
    let probe = CtmdpModel::new(parts.clone()).expect("random parts are valid");
    let floor = attained_drift(&probe, &w).0.max(0.05);
    let alpha = floor + rng.random_range(0.2..2.0);
    let rho = floor + rng.random_range(0.0..0.5) * (alpha - floor);
    parts.alpha = alpha;
    let probe = CtmdpModel::new(parts.clone()).expect("random parts are valid");
    let f = DeterministicPolicy::nth(&probe, rng.random_range(0..DeterministicPolicy::count(&probe)));
    let p = f.to_stationary(&probe);
    parts.constraint_bounds = (1..=shape.n_constraints)
        .map(|j| {
            let v = ctmdp_value(&probe, &p, j).expect("finite resolvent")[0];
            v + rng.random_range(0.0..0.5) * (v.abs() + 1.0)
        })
        .collect();
    let model = CtmdpModel::new(parts).expect("random parts are valid");
    let l = attained_lower_bound(&model, &w).max(L_MIN);
    Instance {
        name: format!("random-{seed}"),
        model,
        cert: DriftCertificate { w, rho, l },
    }
}

/// Linear pure birth `x → x+1` at rate `2x`, truncated at `M` (absorbing),
/// `α = 2`, cost `c_0(x) = x`, certificate `w ≡ 1`, `ρ = 1`.
pub fn pure_birth(truncation: usize) -> Instance {
    let f = ModelFamily::pure_birth(RateLaw::linear(2.0), truncation);
    let costs: Vec<f64> = (1..=truncation).map(|x| x as f64).collect();
    let model = build_family(&f, &[costs], 2.0, vec![], 1).expect("truncation >= 2");
    Instance {
        name: format!("pure-birth-{truncation}"),
        model,
        cert: DriftCertificate {
            w: vec![1.0; truncation],
            rho: 1.0,
            l: L_MIN,
        },
    }
}

/// State 0 jumps to the absorbing state 1 at rate `λ`; cost 1 in state 0.
/// Certificate `w = (1, 2)`, `ρ = (λ + α)/2`, valid when `λ < α`.
pub fn two_state_chain(lambda: f64, alpha: f64) -> Instance {
    let model = CtmdpModel::new(ModelParts {
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
    .expect("valid two-state chain");
    Instance {
        name: "two-state".into(),
        model,
        cert: DriftCertificate {
            w: vec![1.0, 2.0],
            rho: (lambda + alpha) / 2.0,
            l: L_MIN,
        },
    }
}

/// One frozen state with running cost `c`.
pub fn single_state(cost: f64, alpha: f64) -> Instance {
    let model = CtmdpModel::new(ModelParts {
        states: vec![StateId { index: 0, label: None }],
        action_sets: vec![vec![0]],
        rates: RateKernel::default(),
        costs: vec![vec![CostEntry { x: 0, action: 0, value: cost }]],
        alpha,
        constraint_bounds: vec![],
        initial_state: 0,
    })
    .expect("valid single state");
    Instance {
        name: "single-state".into(),
        model,
        cert: DriftCertificate {
            w: vec![1.0],
            rho: alpha / 2.0,
            l: (-cost).max(L_MIN),
        },
    }
}

/// One frozen state, two actions, `c_0 = (1, 0)`, `c_1 = (0, 2)`, `d_1 = 1`,
/// `α = 1`: the optimum mixes both actions equally.
pub fn two_action_lp() -> Instance {
    let model = CtmdpModel::new(ModelParts {
        states: vec![StateId { index: 0, label: None }],
        action_sets: vec![vec![0, 1]],
        rates: RateKernel::default(),
        costs: vec![
            vec![CostEntry { x: 0, action: 0, value: 1.0 }, CostEntry { x: 0, action: 1, value: 0.0 }],
            vec![CostEntry { x: 0, action: 0, value: 0.0 }, CostEntry { x: 0, action: 1, value: 2.0 }],
        ],
        alpha: 1.0,
        constraint_bounds: vec![1.0],
        initial_state: 0,
    })
    .expect("valid LP instance");
    Instance {
        name: "two-action-lp".into(),
        model,
        cert: DriftCertificate {
            w: vec![1.0],
            rho: 0.5,
            l: L_MIN,
        },
    }
}

/// The bundled corpus: closed-form models and seeded random instances.
pub fn bundled(random: u64) -> Vec<Instance> {
    let mut out = vec![pure_birth(8), two_state_chain(1.0, 2.0), single_state(5.0, 1.0), two_action_lp()];
    out.extend((0..random).map(|seed| random_instance(seed, InstanceShape::default())));
    out
}
