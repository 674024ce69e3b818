//! Monte-Carlo simulation of the controlled jump process under a stationary
//! policy.
//!
//! For a stationary policy the sojourn in `x` is exponential with the mixed
//! rate `q_{x,π} = Σ_a q_x(a) π(a|x)` and the next state follows
//! `Σ_a q(·|x,a) π(a|x) / q_{x,π}`. An action is drawn from `π(·|x)` once per
//! sojourn and recorded; it does not influence the dynamics.
//!
//! Trajectory `j` of a run with master seed `s` draws from ChaCha8 stream `j`
//! keyed by `s`, so estimates do not depend on the number of workers.

use crate::conditions::DriftCertificate;
use crate::model::CtmdpModel;
use crate::policy::StationaryPolicy;
use crate::resolvent::policy_cost_rate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Target ratio of the tail bound to the estimate scale for the default horizon.
pub const DEFAULT_TAIL_RATIO: f64 = 1e-4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimulationError {
    #[error("policy puts weight on an infinite cost at reachable state {state}")]
    InfiniteCost { state: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    pub state: usize,
    /// Action index recorded for the sojourn starting here.
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    HorizonCapped,
    Absorbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub jumps: Vec<Jump>,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedCostEstimate {
    pub mean: f64,
    #[serde(rename = "stderr")]
    pub standard_error: f64,
    #[serde(rename = "n")]
    pub trajectories: usize,
    pub tail_bound: f64,
    pub horizon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    pub n_traj: usize,
    /// Defaults to `ln(1/DEFAULT_TAIL_RATIO)/(α-ρ)`.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Worker count; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Certificate used for the tail bound; `None` means `w ≡ 1`, `ρ = 0`.
    pub certificate: Option<DriftCertificate>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_traj: 10_000,
            horizon: None,
            seed: 0,
            threads: None,
            certificate: None,
        }
    }
}

/// Random stream of trajectory `index` under master seed `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The mixed jump chain of a stationary policy.
struct MixedChain {
    rows: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

impl MixedChain {
    fn new(m: &CtmdpModel, p: &StationaryPolicy) -> Self {
        let n = m.n_states();
        let mut rows = Vec::with_capacity(n);
        let mut exit = Vec::with_capacity(n);
        for x in 0..n {
            let mut dense = vec![0.0; n];
            for (k, &pk) in p.weights(x).iter().enumerate() {
                if pk > 0.0 {
                    for &(y, q) in m.rate_row(x, k) {
                        dense[y] += pk * q;
                    }
                }
            }
            let row: Vec<(usize, f64)> = dense.into_iter().enumerate().filter(|&(_, q)| q > 0.0).collect();
            exit.push(row.iter().map(|&(_, q)| q).sum());
            rows.push(row);
        }
        Self { rows, exit }
    }

    /// Sojourn length and successor, or `None` if `x` is absorbing.
    fn step(&self, x: usize, rng: &mut ChaCha8Rng) -> Option<(f64, usize)> {
        let rate = self.exit[x];
        if rate <= 0.0 {
            return None;
        }
        let u: f64 = rng.random();
        let sojourn = -(1.0 - u).ln() / rate;
        let target = rng.random::<f64>() * rate;
        let row = &self.rows[x];
        let mut acc = 0.0;
        for &(y, q) in row {
            acc += q;
            if target < acc {
                return Some((sojourn, y));
            }
        }
        Some((sojourn, row[row.len() - 1].0))
    }

    fn reachable(&self, x0: usize) -> Vec<bool> {
        let mut seen = vec![false; self.rows.len()];
        seen[x0] = true;
        let mut stack = vec![x0];
        while let Some(x) = stack.pop() {
            for &(y, _) in &self.rows[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    }
}

fn sample_action(m: &CtmdpModel, p: &StationaryPolicy, x: usize, rng: &mut ChaCha8Rng) -> usize {
    let weights = p.weights(x);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in weights.iter().enumerate() {
        acc += pk;
        if u < acc {
            return m.action_index(x, k);
        }
    }
    let last = weights.iter().rposition(|&pk| pk > 0.0).unwrap_or(0);
    m.action_index(x, last)
}

fn check_inputs(m: &CtmdpModel, p: &StationaryPolicy, x0: usize) -> Result<(), SimulationError> {
    if x0 >= m.n_states() {
        return Err(SimulationError::Argument(format!("initial state {x0} out of range")));
    }
    p.check(m).map_err(|e| SimulationError::Argument(e.to_string()))
}

/// One trajectory on `[0, horizon]`, drawn from stream 0 of `seed`.
pub fn simulate_trajectory(
    m: &CtmdpModel,
    p: &StationaryPolicy,
    x0: usize,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, SimulationError> {
    check_inputs(m, p, x0)?;
    if !(horizon > 0.0) {
        return Err(SimulationError::Argument(format!("horizon = {horizon} must be > 0")));
    }
    let chain = MixedChain::new(m, p);
    let mut rng = trajectory_rng(seed, 0);
    let mut x = x0;
    let mut t = 0.0;
    let mut jumps = vec![Jump {
        t,
        state: x,
        action: sample_action(m, p, x, &mut rng),
    }];
    loop {
        let Some((sojourn, y)) = chain.step(x, &mut rng) else {
            return Ok(Trajectory {
                jumps,
                terminal: Terminal::Absorbed,
            });
        };
        t += sojourn;
        if t >= horizon {
            return Ok(Trajectory {
                jumps,
                terminal: Terminal::HorizonCapped,
            });
        }
        x = y;
        jumps.push(Jump {
            t,
            state: x,
            action: sample_action(m, p, x, &mut rng),
        });
    }
}

/// `∫_0^{T_h} e^{-αt} r(ξ_t) dt` along one trajectory.
fn discounted_path_integral(chain: &MixedChain, rate: &[f64], alpha: f64, x0: usize, horizon: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut x = x0;
    let mut t = 0.0;
    let mut total = 0.0;
    let cap = (-alpha * horizon).exp();
    loop {
        let start = (-alpha * t).exp();
        match chain.step(x, rng) {
            Some((sojourn, y)) if t + sojourn < horizon => {
                let next = t + sojourn;
                if rate[x] != 0.0 {
                    total += rate[x] * (start - (-alpha * next).exp()) / alpha;
                }
                t = next;
                x = y;
            }
            _ => {
                total += rate[x] * (start - cap) / alpha;
                return total;
            }
        }
    }
}

/// Default horizon `ln(1/DEFAULT_TAIL_RATIO)/(α-ρ)`.
pub fn default_horizon(alpha: f64, rho: f64) -> f64 {
    (1.0 / DEFAULT_TAIL_RATIO).ln() / (alpha - rho)
}

fn run_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .expect("thread pool")
            .install(job),
        None => job(),
    }
}

/// Per-trajectory discounted integrals of the state rate `r`, in trajectory order.
pub fn path_integral_samples(
    m: &CtmdpModel,
    p: &StationaryPolicy,
    x0: usize,
    rate: &[f64],
    horizon: f64,
    opts: &McOptions,
) -> Result<Vec<f64>, SimulationError> {
    check_inputs(m, p, x0)?;
    if !(horizon > 0.0) {
        return Err(SimulationError::Argument(format!("horizon = {horizon} must be > 0")));
    }
    let chain = MixedChain::new(m, p);
    let reach = chain.reachable(x0);
    if let Some(state) = (0..m.n_states()).find(|&x| reach[x] && !rate[x].is_finite()) {
        return Err(SimulationError::InfiniteCost { state });
    }
    let alpha = m.alpha();
    let seed = opts.seed;
    Ok(run_pool(opts.threads, || {
        (0..opts.n_traj as u64)
            .into_par_iter()
            .map(|j| {
                let mut rng = trajectory_rng(seed, j);
                discounted_path_integral(&chain, rate, alpha, x0, horizon, &mut rng)
            })
            .collect()
    }))
}

fn estimate(
    m: &CtmdpModel,
    p: &StationaryPolicy,
    x0: usize,
    rate: &[f64],
    opts: &McOptions,
) -> Result<DiscountedCostEstimate, SimulationError> {
    if opts.n_traj == 0 {
        return Err(SimulationError::Argument("need at least one trajectory".into()));
    }
    let (w, rho) = match &opts.certificate {
        Some(c) => (c.w.clone(), c.rho),
        None => (vec![1.0; m.n_states()], 0.0),
    };
    if w.len() != m.n_states() {
        return Err(SimulationError::Argument("certificate does not fit the model".into()));
    }
    let residual = m.alpha() - rho;
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(m.alpha(), rho));
    let samples = path_integral_samples(m, p, x0, rate, horizon, opts)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let reach = MixedChain::new(m, p).reachable(x0);
    let k = (0..m.n_states())
        .filter(|&x| reach[x])
        .map(|x| rate[x].abs() / w[x])
        .fold(0.0, f64::max);
    Ok(DiscountedCostEstimate {
        mean,
        standard_error: (var / n).sqrt(),
        trajectories: samples.len(),
        tail_bound: k * w[x0] * (-residual * horizon).exp() / residual,
        horizon,
        seed: opts.seed,
    })
}

/// Monte-Carlo estimate of `E_x0^π ∫ e^{-αt} c̄_i(ξ_t) dt`.
pub fn estimate_discounted_cost(
    m: &CtmdpModel,
    p: &StationaryPolicy,
    x0: usize,
    i: usize,
    opts: &McOptions,
) -> Result<DiscountedCostEstimate, SimulationError> {
    if i >= m.n_costs() {
        return Err(SimulationError::Argument(format!("cost index {i} out of range")));
    }
    check_inputs(m, p, x0)?;
    estimate(m, p, x0, &policy_cost_rate(m, p, i), opts)
}

/// Monte-Carlo estimate of `E_x0^π ∫ e^{-αt} w(ξ_t) dt`.
pub fn estimate_w_integral(
    m: &CtmdpModel,
    p: &StationaryPolicy,
    x0: usize,
    w: &[f64],
    opts: &McOptions,
) -> Result<DiscountedCostEstimate, SimulationError> {
    if w.len() != m.n_states() {
        return Err(SimulationError::Argument("w does not fit the model".into()));
    }
    check_inputs(m, p, x0)?;
    estimate(m, p, x0, w, opts)
}
