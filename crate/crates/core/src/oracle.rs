//! Exact solution of small `N`-particle systems by backward induction over
//! every reachable `(M, C)`, with the context snapped to a lattice.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::ContextLattice;
use crate::model::{compositions, Action, Context, Kernel, ModelSpec, PopulationMeasure, COUNT_TOL};
use crate::sim::{DecisionRule, Policy, SystemState};

pub const DEFAULT_MAX_STATES: u128 = 10_000_000;

type Node = (Vec<u64>, usize);

/// `V*^N_{t..T}` and the optimal action index for every reachable node.
#[derive(Clone, Debug)]
pub struct ExactValueTable {
    pub particles: u64,
    pub actions: Vec<Action>,
    pub contexts: ContextLattice,
    /// `layers[t]` maps `(counts, context node)` to `(value, action)`;
    /// the action is meaningless at `t = T`.
    pub layers: Vec<BTreeMap<Node, (f64, usize)>>,
    /// Optimal expected reward from the initial state, excluding `r_0`.
    pub initial_value: f64,
}

impl ExactValueTable {
    pub fn value(&self, t: usize, counts: &[u64], context: usize) -> Option<f64> {
        self.layers
            .get(t)?
            .get(&(counts.to_vec(), context))
            .map(|v| v.0)
    }

    /// `t,<state counts>...,context_node,value,action`.
    pub fn to_csv(&self, spec: &ModelSpec) -> String {
        let mut out = String::from("t");
        for l in spec.states.labels() {
            let _ = write!(out, ",n_{l}");
        }
        out.push_str(",context_node,value,action\n");
        let horizon = self.layers.len() - 1;
        for (t, layer) in self.layers.iter().enumerate() {
            for ((counts, c), (v, a)) in layer {
                let _ = write!(out, "{t}");
                for n in counts {
                    let _ = write!(out, ",{n}");
                }
                let a = if t == horizon { String::new() } else { a.to_string() };
                let _ = writeln!(out, ",{c},{v},{a}");
            }
        }
        out
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// `|P_N(S)| x |context lattice| x T`.
pub fn state_count(states: usize, n: u64, contexts: usize, horizon: usize) -> u128 {
    binomial(n as u128 + states as u128 - 1, states as u128 - 1)
        .saturating_mul(contexts as u128)
        .saturating_mul(horizon as u128)
}

fn initial_counts(spec: &ModelSpec, n: u64) -> Result<Vec<u64>> {
    spec.initial
        .measure
        .weights()
        .iter()
        .map(|w| {
            let x = w * n as f64;
            let r = x.round();
            if (x - r).abs() > COUNT_TOL {
                Err(Error::Domain(format!(
                    "initial measure is not representable with N={n} particles"
                )))
            } else {
                Ok(r as u64)
            }
        })
        .collect()
}

fn check_size(spec: &ModelSpec, n: u64, contexts: &ContextLattice, max_states: u128) -> Result<()> {
    if contexts.dim() != spec.context_dim {
        return Err(Error::Config(format!(
            "context lattice has dimension {}, model has {}",
            contexts.dim(),
            spec.context_dim
        )));
    }
    let count = state_count(spec.num_states(), n, contexts.len(), spec.horizon);
    if count > max_states {
        return Err(Error::Size { count, cap: max_states });
    }
    Ok(())
}

struct Transitions {
    log_fact: Vec<f64>,
}

impl Transitions {
    fn new(n: u64) -> Self {
        let mut log_fact = vec![0.0; n as usize + 1];
        for i in 1..=n as usize {
            log_fact[i] = log_fact[i - 1] + (i as f64).ln();
        }
        Self { log_fact }
    }

    /// Law of the next counts: convolution over source states of
    /// multinomial splits along the kernel rows.
    fn law(&self, counts: &[u64], k: &Kernel) -> BTreeMap<Vec<u64>, f64> {
        let s = counts.len();
        let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        acc.insert(vec![0; s], 1.0);
        for (i, &ni) in counts.iter().enumerate() {
            if ni == 0 {
                continue;
            }
            let row = k.row(i);
            let mut split: Vec<(Vec<u64>, f64)> = Vec::new();
            let mut buf = vec![0usize; s];
            compositions(ni as usize, s, 0, &mut buf, &mut |x| {
                let mut lp = self.log_fact[ni as usize];
                for (j, &xj) in x.iter().enumerate() {
                    if xj == 0 {
                        continue;
                    }
                    if row[j] <= 0.0 {
                        return;
                    }
                    lp += xj as f64 * row[j].ln() - self.log_fact[xj];
                }
                split.push((x.iter().map(|&v| v as u64).collect(), lp.exp()));
            });
            let mut next = BTreeMap::new();
            for (base, p) in &acc {
                for (x, q) in &split {
                    let key: Vec<u64> = base.iter().zip(x).map(|(a, b)| a + b).collect();
                    *next.entry(key).or_insert(0.0) += p * q;
                }
            }
            acc = next;
        }
        acc
    }
}

fn weights(counts: &[u64], n: u64) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

struct Solver<'a> {
    spec: &'a ModelSpec,
    n: u64,
    actions: Vec<Action>,
    contexts: &'a ContextLattice,
    points: Vec<Vec<f64>>,
    transitions: Transitions,
    memo: Vec<HashMap<Node, (f64, usize)>>,
}

impl Solver<'_> {
    fn value(&mut self, t: usize, node: &Node) -> f64 {
        if let Some(v) = self.memo[t].get(node) {
            return v.0;
        }
        let w = weights(&node.0, self.n);
        let c = self.points[node.1].clone();
        let result = if t == self.spec.horizon {
            (self.spec.reward.terminal(&w, &c), 0)
        } else {
            let mut best = (self.spec.sense.worst(), 0);
            for ai in 0..self.actions.len() {
                let a = self.actions[ai].clone();
                let k = self.spec.kernel.eval(t, &a, &c);
                let mut expect = 0.0;
                for (next, p) in self.transitions.law(&node.0, &k) {
                    let w1 = weights(&next, self.n);
                    let c1 = self.spec.env.eval(&c, &w, &w1, &a, t);
                    let child = (next, self.contexts.snap(&c1));
                    expect += p * self.value(t + 1, &child);
                }
                if ai == 0 || self.spec.sense.better(expect, best.0) {
                    best = (expect, ai);
                }
            }
            (self.spec.reward.running(t, &w, &c) + best.0, best.1)
        };
        self.memo[t].insert(node.clone(), result);
        result.0
    }
}

/// Solves `V*^N_{t..T}(M,C) = r_t(M,C) + sup_a E[V*^N_{t+1..T}(Phi^N_a(M,C))]`
/// exactly over the nodes reachable from the initial state. Contexts are
/// snapped to the nearest lattice point after every step.
pub fn solve_exact(spec: &ModelSpec, n: u64, contexts: &ContextLattice, max_states: u128) -> Result<ExactValueTable> {
    spec.check()?;
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    check_size(spec, n, contexts, max_states)?;
    let start: Node = (initial_counts(spec, n)?, contexts.snap(spec.initial.context.values()));
    let mut solver = Solver {
        spec,
        n,
        actions: spec.actions.grid(),
        contexts,
        points: contexts.points(),
        transitions: Transitions::new(n),
        memo: vec![HashMap::new(); spec.horizon + 1],
    };
    let v0 = solver.value(0, &start);
    let r0 = spec
        .reward
        .running(0, &weights(&start.0, n), &solver.points[start.1]);
    let layers = solver
        .memo
        .into_iter()
        .map(|layer| layer.into_iter().collect())
        .collect();
    Ok(ExactValueTable {
        particles: n,
        actions: solver.actions,
        contexts: contexts.clone(),
        layers,
        initial_value: v0 - r0,
    })
}

/// Exact expected reward of `policy` by propagating the law of `(M, C)`
/// forward over `P_N(S) x` lattice.
pub fn policy_value_exact(
    spec: &ModelSpec,
    policy: &Policy,
    n: u64,
    contexts: &ContextLattice,
    max_states: u128,
) -> Result<f64> {
    spec.check()?;
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    check_size(spec, n, contexts, max_states)?;
    policy.check(spec)?;
    let points = contexts.points();
    let transitions = Transitions::new(n);
    let mut law: BTreeMap<Node, f64> = BTreeMap::new();
    law.insert((initial_counts(spec, n)?, contexts.snap(spec.initial.context.values())), 1.0);
    let mut total = 0.0;
    for t in 0..spec.horizon {
        let mut next_law: BTreeMap<Node, f64> = BTreeMap::new();
        for ((counts, ci), p) in &law {
            let w = weights(counts, n);
            let c = &points[*ci];
            let state = SystemState {
                measure: PopulationMeasure::from_counts(counts)?,
                context: Context::new(c.clone()),
                time: t,
            };
            let a = policy.action(t, &state)?;
            spec.check_action(&a, t)?;
            let k = spec.kernel.eval(t, &a, c);
            for (next, q) in transitions.law(counts, &k) {
                let w1 = weights(&next, n);
                let c1 = spec.env.eval(c, &w, &w1, &a, t);
                *next_law.entry((next, contexts.snap(&c1))).or_insert(0.0) += p * q;
            }
        }
        for ((counts, ci), p) in &next_law {
            total += p * spec.reward_at(t + 1, &weights(counts, n), &points[*ci]);
        }
        law = next_law;
    }
    Ok(total)
}

/// Replays the optimal actions of an exact table.
#[derive(Clone, Debug)]
pub struct ExactPolicy {
    pub table: Arc<ExactValueTable>,
}

impl DecisionRule for ExactPolicy {
    fn decide(&self, t: usize, state: &SystemState) -> Result<Action> {
        let counts = state
            .measure
            .counts()
            .ok_or_else(|| Error::Domain("exact policy needs a finite particle count".into()))?;
        let node = (counts, self.table.contexts.snap(state.context.values()));
        let (_, a) = self
            .table
            .layers
            .get(t)
            .and_then(|l| l.get(&node))
            .ok_or_else(|| Error::Domain(format!("state at t={t} is not in the exact table")))?;
        Ok(self.table.actions[*a].clone())
    }
}
