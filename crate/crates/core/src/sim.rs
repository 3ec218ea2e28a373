//! Exact simulation of the `N`-particle controlled system and Monte Carlo
//! estimation of finite-horizon rewards.
//!
//! Rewards follow the finite-horizon accounting `r_1 + ... + r_{T-1} + r_T`;
//! the reward of the initial state is not collected.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Action, ActionSet, Context, InitialState, ModelSpec, PopulationMeasure};
use crate::rng::{SeedStreams, SimRng};

/// Joint stochastic state `(M^N_t, C^N_t)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub measure: PopulationMeasure,
    pub context: Context,
    pub time: usize,
}

impl SystemState {
    pub fn particles(&self) -> Option<u64> {
        self.measure.particles()
    }
}

/// A state-dependent decision rule `(t, state) -> action`.
pub trait DecisionRule: Send + Sync + fmt::Debug {
    fn decide(&self, t: usize, state: &SystemState) -> Result<Action>;
}

#[derive(Clone, Debug)]
pub enum Policy {
    /// Fixed action sequence `a_0 .. a_{T-1}`, applied regardless of state.
    OpenLoop(Vec<Action>),
    Feedback(Arc<dyn DecisionRule>),
    /// A named baseline such as `JSQ`.
    Named(String, Arc<dyn DecisionRule>),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::OpenLoop(_) => "open-loop".into(),
            Policy::Feedback(_) => "feedback".into(),
            Policy::Named(name, _) => name.clone(),
        }
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if let Policy::OpenLoop(seq) = self {
            if seq.len() != spec.horizon {
                return Err(Error::Domain(format!(
                    "open-loop policy has {} actions for horizon {}",
                    seq.len(),
                    spec.horizon
                )));
            }
            for (t, a) in seq.iter().enumerate() {
                spec.check_action(a, t)?;
            }
        }
        Ok(())
    }

    pub fn action(&self, t: usize, state: &SystemState) -> Result<Action> {
        match self {
            Policy::OpenLoop(seq) => seq
                .get(t)
                .cloned()
                .ok_or_else(|| Error::Domain(format!("open-loop policy has no action for t={t}"))),
            Policy::Feedback(rule) | Policy::Named(_, rule) => rule.decide(t, state),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// States at `t = 0..=T`.
    pub states: Vec<SystemState>,
    pub actions: Vec<Action>,
    /// Reward collected on reaching `t = 1..=T`.
    pub per_step_rewards: Vec<f64>,
    pub total_reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replications: usize,
    pub ci95_halfwidth: f64,
}

impl RewardEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let r = samples.len();
        let mean = samples.iter().sum::<f64>() / r as f64;
        let var = if r > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64
        } else {
            0.0
        };
        let stderr = (var / r as f64).sqrt();
        Self {
            mean,
            stderr,
            replications: r,
            ci95_halfwidth: 1.96 * stderr,
        }
    }
}

/// Draws `Multinomial(n, probs)` into `out` by sequential binomial
/// conditioning.
pub fn sample_multinomial(n: u64, probs: &[f64], rng: &mut SimRng, out: &mut [u64]) {
    out.iter_mut().for_each(|x| *x = 0);
    let mut left = n;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1);
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j == last {
            out[j] += left;
            break;
        }
        let p = p.max(0.0);
        if p == 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let x = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(0)
        };
        out[j] += x;
        left -= x;
        mass -= p;
    }
}

/// One transition of the `N`-particle system: every particle in state `i`
/// moves independently according to row `i` of `K(a, C, t)`.
pub fn sample_transition(spec: &ModelSpec, state: &SystemState, a: &Action, rng: &mut SimRng) -> Result<SystemState> {
    let counts = state
        .measure
        .counts()
        .ok_or_else(|| Error::Domain("stochastic transition needs a finite particle count".into()))?;
    spec.check_action(a, state.time)?;
    let n = state.measure.particles().unwrap_or(0);
    let t = state.time;
    let c = state.context.values();
    let k = spec.kernel.eval(t, a, c);
    let s = counts.len();
    let mut next = vec![0u64; s];
    let mut split = vec![0u64; s];
    for (i, &ni) in counts.iter().enumerate() {
        if ni == 0 {
            continue;
        }
        sample_multinomial(ni, k.row(i), rng, &mut split);
        for (acc, x) in next.iter_mut().zip(&split) {
            *acc += x;
        }
    }
    let measure = PopulationMeasure::from_counts(&next)?;
    let ctx = spec
        .env
        .sample(c, state.measure.weights(), measure.weights(), a, t, n, rng);
    Ok(SystemState {
        measure,
        context: Context::new(ctx),
        time: t + 1,
    })
}

/// Builds the size-`n` initial state from the base composition: each class
/// gets `floor(share * n / base)` particles, the remaining particles go to
/// classes with probability proportional to the fractional parts, and each
/// particle then picks its initial state from the class split.
pub fn scaled_initial_state(initial: &InitialState, n: u64, rng: &mut SimRng) -> Result<SystemState> {
    let base = initial.base_size;
    let total: f64 = initial.classes.iter().map(|c| c.share).sum();
    if (total - base).abs() > 1e-9 * base.max(1.0) {
        return Err(Error::Config(format!("class shares sum to {total}, base size is {base}")));
    }
    if n == 0 || (n as f64) + 1e-9 < base.min(n as f64).max(1.0) {
        return Err(Error::Domain(format!("cannot build a system of {n} particles")));
    }
    let s = initial.measure.len();
    let exact: Vec<f64> = initial.classes.iter().map(|c| c.share * n as f64 / base).collect();
    let mut class_counts: Vec<u64> = exact
        .iter()
        .map(|&x| {
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                r as u64
            } else {
                x.floor() as u64
            }
        })
        .collect();
    let placed: u64 = class_counts.iter().sum();
    if placed > n {
        return Err(Error::Invariant("class floors exceed the particle count".into()));
    }
    let remaining = n - placed;
    if remaining > 0 {
        let fracs: Vec<f64> = exact
            .iter()
            .zip(&class_counts)
            .map(|(&x, &c)| (x - c as f64).max(0.0))
            .collect();
        let mut extra = vec![0u64; fracs.len()];
        sample_multinomial(remaining, &fracs, rng, &mut extra);
        for (c, e) in class_counts.iter_mut().zip(extra) {
            *c += e;
        }
    }
    let mut counts = vec![0u64; s];
    for (class, &k) in initial.classes.iter().zip(&class_counts) {
        if k == 0 {
            continue;
        }
        let probs: Vec<f64> = class.split.iter().map(|(_, p)| *p).collect();
        let mut out = vec![0u64; probs.len()];
        sample_multinomial(k, &probs, rng, &mut out);
        for ((state, _), x) in class.split.iter().zip(out) {
            counts[*state] += x;
        }
    }
    Ok(SystemState {
        measure: PopulationMeasure::from_counts(&counts)?,
        context: initial.context.clone(),
        time: 0,
    })
}

/// Rolls the system of `n` particles from a fresh initial state up to the
/// horizon, drawing randomness from `rng`.
pub fn simulate_with_rng(spec: &ModelSpec, policy: &Policy, n: u64, rng: &mut SimRng) -> Result<Trajectory> {
    let mut state = scaled_initial_state(&spec.initial, n, rng)?;
    let mut states = Vec::with_capacity(spec.horizon + 1);
    let mut actions = Vec::with_capacity(spec.horizon);
    let mut rewards = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let a = policy.action(t, &state)?;
        spec.check_action(&a, t)?;
        let next = sample_transition(spec, &state, &a, rng)?;
        rewards.push(spec.reward_at(t + 1, next.measure.weights(), next.context.values()));
        states.push(std::mem::replace(&mut state, next));
        actions.push(a);
    }
    states.push(state);
    Ok(Trajectory {
        states,
        actions,
        total_reward: rewards.iter().sum(),
        per_step_rewards: rewards,
    })
}

/// One trajectory; bit-reproducible from `(seed, n, policy)`. Uses the
/// same stream as replication 0 of [`estimate_reward`].
pub fn simulate_trajectory(spec: &ModelSpec, policy: &Policy, n: u64, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    policy.check(spec)?;
    let mut rng = SeedStreams::new(seed).replication(0);
    simulate_with_rng(spec, policy, n, &mut rng)
}

/// Monte Carlo estimate of the expected finite-horizon reward over
/// `replications` independent runs. Replication `i` uses stream `i` of the
/// seed; the reduction runs in replication order.
pub fn estimate_reward(
    spec: &ModelSpec,
    policy: &Policy,
    n: u64,
    replications: usize,
    seed: u64,
) -> Result<RewardEstimate> {
    let totals = replicate(spec, policy, n, replications, seed, |t| t.total_reward)?;
    Ok(RewardEstimate::from_samples(&totals))
}

/// Runs `replications` trajectories in parallel and maps each through `f`,
/// returning results in replication order.
pub fn replicate<T, F>(
    spec: &ModelSpec,
    policy: &Policy,
    n: u64,
    replications: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Trajectory) -> T + Sync,
{
    if replications < 2 {
        return Err(Error::Domain("need at least 2 replications".into()));
    }
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    policy.check(spec)?;
    let streams = SeedStreams::new(seed);
    (0..replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.replication(i);
            simulate_with_rng(spec, policy, n, &mut rng).map(&f)
        })
        .collect()
}

/// Label of an action for CSV output: its grid index for finite sets,
/// otherwise its coordinates joined by `;`.
pub fn action_id(set: &ActionSet, a: &Action) -> String {
    match set {
        ActionSet::Finite(_) => set
            .grid_index(a)
            .map(|i| i.to_string())
            .unwrap_or_else(|| a.to_string()),
        _ => a.to_string(),
    }
}

/// `t, w_<state>..., c_<k>..., action, reward`; the action column holds the
/// action taken at `t` and the reward column the reward collected on
/// reaching `t`.
pub fn trajectory_csv(spec: &ModelSpec, traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for l in spec.states.labels() {
        let _ = write!(out, ",w_{l}");
    }
    for k in 0..spec.context_dim {
        let _ = write!(out, ",c_{k}");
    }
    out.push_str(",action,reward\n");
    for (t, s) in traj.states.iter().enumerate() {
        let _ = write!(out, "{t}");
        for w in s.measure.weights() {
            let _ = write!(out, ",{w}");
        }
        for c in s.context.values() {
            let _ = write!(out, ",{c}");
        }
        let action = traj.actions.get(t).map(|a| action_id(&spec.actions, a)).unwrap_or_default();
        let reward = if t == 0 { String::new() } else { traj.per_step_rewards[t - 1].to_string() };
        let _ = writeln!(out, ",{action},{reward}");
    }
    out
}

/// `policy, N, R, mean, stderr`.
pub fn estimates_csv(rows: &[(String, u64, RewardEstimate)]) -> String {
    let mut out = String::from("policy,N,R,mean,stderr\n");
    for (p, n, e) in rows {
        let _ = writeln!(out, "{p},{n},{},{},{}", e.replications, e.mean, e.stderr);
    }
    out
}

/// Uniform draw helper used by tests and randomized rules.
pub fn uniform(rng: &mut SimRng) -> f64 {
    rng.gen::<f64>()
}
