//! Grid brokering: on/off sources send tasks that a broker routes to
//! multi-processor queues, minimizing the total backlog.
//!
//! Every particle is a source or a processor of some queue and is either on
//! or off. Particles are grouped in classes; class `k` owns states `2k`
//! (on) and `2k + 1` (off) and never changes class. The context is the
//! buffer vector divided by the system size, and the particles that are on
//! at time `t` send (sources) or serve (processors) during `[t, t+1)`:
//!
//! `B_{t+1}^i = (B_t^i - mu_i X_t^i + a_t^i Y_t)^+`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{ScalarReward, SplitReward};
use crate::error::{Error, Result};
use crate::meanfield::{optimize_open_loop, ResolvePolicy, DEFAULT_SEARCH_BUDGET};
use crate::model::{
    Action, ActionSet, ClassMix, Context, EnvMap, InitialState, Kernel, KernelMap, LimitSolver, ModelSpec,
    PopulationMeasure, Sense, StateSpace,
};
use crate::rng::SimRng;
use crate::sim::{sample_multinomial, DecisionRule, Policy, SystemState};

/// Volumes below this are treated as zero by the allocator.
const VOLUME_EPS: f64 = 1e-12;

/// On/off switching matrix `[[on->on, on->off], [off->on, off->off]]`.
pub type OnOff = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Source,
    Server(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleClass {
    pub role: Role,
    /// Particles of this class in the base system.
    pub count: f64,
    /// Probability of starting on.
    pub initial_on: f64,
    /// Switching matrix used between `t` and `t + 1`; the last one is reused
    /// past the end.
    pub kernels: Vec<OnOff>,
}

impl ParticleClass {
    pub fn kernel_at(&self, t: usize) -> OnOff {
        self.kernels[t.min(self.kernels.len() - 1)]
    }
}

/// How `a_t Y_t` tasks are split between queues in a finite system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    /// Each task picks queue `i` independently with probability `a^i`.
    #[default]
    Randomized,
    /// Largest-remainder rounding of `a^i Y` to integers summing to `Y`.
    Rounded,
    /// Fractional volumes `a^i Y`, as in the limit equation.
    Fluid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrokerInstance {
    /// `mu_i` per queue.
    pub speeds: Vec<f64>,
    pub classes: Vec<ParticleClass>,
    pub horizon: usize,
    /// Initial buffers of the base system, in tasks.
    pub initial_buffers: Vec<f64>,
    pub routing: RoutingMode,
}

fn check_on_off(k: &OnOff) -> bool {
    k.iter()
        .all(|row| row.iter().all(|p| (0.0..=1.0).contains(p)) && (row[0] + row[1] - 1.0).abs() <= 1e-12)
}

impl BrokerInstance {
    /// `sources` source particles and one class per queue with
    /// `queues[i] = (processors, speed)`. `kernels[0]` drives the sources and
    /// `kernels[i + 1]` the processors of queue `i`. Everything starts on
    /// with probability one half.
    pub fn standard(
        sources: f64,
        queues: &[(f64, f64)],
        kernels: Vec<Vec<OnOff>>,
        horizon: usize,
        initial_buffers: Vec<f64>,
    ) -> Result<Self> {
        if kernels.len() != queues.len() + 1 {
            return Err(Error::Config(format!(
                "need {} kernel sequences (sources then queues), got {}",
                queues.len() + 1,
                kernels.len()
            )));
        }
        let mut ks = kernels.into_iter();
        let mut classes = vec![ParticleClass {
            role: Role::Source,
            count: sources,
            initial_on: 0.5,
            kernels: ks.next().unwrap_or_default(),
        }];
        for (i, (&(procs, _), k)) in queues.iter().zip(ks).enumerate() {
            classes.push(ParticleClass {
                role: Role::Server(i),
                count: procs,
                initial_on: 0.5,
                kernels: k,
            });
        }
        let inst = Self {
            speeds: queues.iter().map(|q| q.1).collect(),
            classes,
            horizon,
            initial_buffers,
            routing: RoutingMode::default(),
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Deterministic instance from explicit on/off patterns, one per
    /// particle: `pattern[t]` says whether the particle is on at `t`.
    /// Particles sharing role and pattern are merged into one class.
    pub fn from_patterns(
        speeds: Vec<f64>,
        sources: &[Vec<bool>],
        servers: &[(usize, Vec<bool>)],
        initial_buffers: Vec<f64>,
    ) -> Result<Self> {
        let horizon = sources
            .iter()
            .chain(servers.iter().map(|s| &s.1))
            .map(|p| p.len())
            .max()
            .unwrap_or(0);
        let mut classes: Vec<(Role, Vec<bool>, f64)> = Vec::new();
        let all = sources
            .iter()
            .map(|p| (Role::Source, p))
            .chain(servers.iter().map(|(q, p)| (Role::Server(*q), p)));
        for (role, pattern) in all {
            if pattern.len() != horizon {
                return Err(Error::Config("all availability patterns need the same length".into()));
            }
            match classes.iter_mut().find(|(r, p, _)| *r == role && p == pattern) {
                Some(c) => c.2 += 1.0,
                None => classes.push((role, pattern.clone(), 1.0)),
            }
        }
        let classes = classes
            .into_iter()
            .map(|(role, pattern, count)| {
                let kernels = (0..horizon)
                    .map(|t| match pattern.get(t + 1) {
                        Some(true) => [[1.0, 0.0], [1.0, 0.0]],
                        Some(false) => [[0.0, 1.0], [0.0, 1.0]],
                        None => [[1.0, 0.0], [0.0, 1.0]],
                    })
                    .collect();
                ParticleClass {
                    role,
                    count,
                    initial_on: if pattern[0] { 1.0 } else { 0.0 },
                    kernels,
                }
            })
            .collect();
        let inst = Self {
            speeds,
            classes,
            horizon,
            initial_buffers,
            routing: RoutingMode::Fluid,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Three-queue worked example: unit speeds, two tasks per queue at
    /// start, arrivals 8,1,0,1,7,6,6.
    pub fn three_queue() -> Self {
        let arrivals = [8usize, 1, 0, 1, 7, 6, 6];
        let sources: Vec<Vec<bool>> = (0..8).map(|j| arrivals.iter().map(|&y| j < y).collect()).collect();
        let pat = |s: &str| s.chars().map(|c| c == '1').collect::<Vec<bool>>();
        let servers = vec![
            (0, pat("1111111")),
            (0, pat("1111110")),
            (0, pat("1000100")),
            (0, pat("0000100")),
            (1, pat("0011011")),
            (1, pat("0001010")),
            (2, pat("1111111")),
            (2, pat("1111111")),
            (2, pat("0111010")),
        ];
        Self::from_patterns(vec![1.0; 3], &sources, &servers, vec![2.0; 3]).expect("three-queue instance is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.speeds.len();
        if d == 0 {
            return Err(Error::Config("broker needs at least one queue".into()));
        }
        if self.speeds.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("queue speeds must be positive".into()));
        }
        if self.initial_buffers.len() != d || self.initial_buffers.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config(format!("need {d} nonnegative initial buffers")));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if let Role::Server(q) = c.role {
                if q >= d {
                    return Err(Error::Config(format!("class {k} serves unknown queue {q}")));
                }
            }
            if !(c.count >= 0.0) || !(0.0..=1.0).contains(&c.initial_on) {
                return Err(Error::Config(format!("class {k} has invalid count or initial law")));
            }
            if c.kernels.is_empty() || !c.kernels.iter().all(check_on_off) {
                return Err(Error::Config(format!("class {k} has a non-stochastic on/off kernel")));
            }
        }
        if self.base_size() <= 0.0 {
            return Err(Error::Config("broker has no particles".into()));
        }
        Ok(())
    }

    pub fn num_queues(&self) -> usize {
        self.speeds.len()
    }

    /// `N0`.
    pub fn base_size(&self) -> f64 {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn num_states(&self) -> usize {
        2 * self.classes.len()
    }

    fn on_states(&self, role: Role) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == role)
            .map(|(k, _)| 2 * k)
            .collect()
    }

    /// `(y, x)` with `y` the arrivals and `x[i]` the service capacity
    /// `mu_i X^i` read from a measure (in units of the measure).
    pub fn load(&self, m: &[f64]) -> (f64, Vec<f64>) {
        let y = self.on_states(Role::Source).iter().map(|&s| m[s]).sum();
        let x = (0..self.num_queues())
            .map(|i| self.speeds[i] * self.on_states(Role::Server(i)).iter().map(|&s| m[s]).sum::<f64>())
            .collect();
        (y, x)
    }

    /// Block-diagonal kernel at time `t`.
    pub fn kernel_at(&self, t: usize) -> Kernel {
        let s = self.num_states();
        let mut k = Kernel::from_rows(vec![vec![0.0; s]; s]);
        for (c, class) in self.classes.iter().enumerate() {
            let m = class.kernel_at(t);
            for i in 0..2 {
                for j in 0..2 {
                    k.set(2 * c + i, 2 * c + j, m[i][j]);
                }
            }
        }
        k
    }

    /// Limit arrivals and capacities for `t0..T` starting from measure `m`
    /// at `t0`.
    pub fn limit_load(&self, t0: usize, m: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut m = m.to_vec();
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for t in t0..self.horizon {
            let (y, x) = self.load(&m);
            ys.push(y);
            xs.push(x);
            m = self.kernel_at(t).left_mul(&m);
        }
        (ys, xs)
    }

    /// Expected arrivals and capacities of the base system, in tasks.
    pub fn base_load(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut on: Vec<f64> = self.classes.iter().map(|c| c.initial_on).collect();
        let d = self.num_queues();
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for t in 0..self.horizon {
            let mut y = 0.0;
            let mut x = vec![0.0; d];
            for (c, p) in self.classes.iter().zip(&on) {
                match c.role {
                    Role::Source => y += c.count * p,
                    Role::Server(i) => x[i] += self.speeds[i] * c.count * p,
                }
            }
            ys.push(y);
            xs.push(x);
            for (c, p) in self.classes.iter().zip(on.iter_mut()) {
                let k = c.kernel_at(t);
                *p = *p * k[0][0] + (1.0 - *p) * k[1][0];
            }
        }
        (ys, xs)
    }

    pub fn initial_state(&self) -> InitialState {
        let n0 = self.base_size();
        let mut weights = Vec::with_capacity(self.num_states());
        let mut classes = Vec::new();
        for (k, c) in self.classes.iter().enumerate() {
            weights.push(c.count / n0 * c.initial_on);
            weights.push(c.count / n0 * (1.0 - c.initial_on));
            if c.count > 0.0 {
                classes.push(ClassMix {
                    share: c.count,
                    split: vec![(2 * k, c.initial_on), (2 * k + 1, 1.0 - c.initial_on)],
                });
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        InitialState {
            measure: PopulationMeasure::continuum(weights).expect("class weights form a probability vector"),
            context: Context::new(self.initial_buffers.iter().map(|b| b / n0).collect()),
            classes,
            base_size: n0,
        }
    }
}

/// `(B - served + routed)^+` componentwise.
pub fn queue_step(buffers: &[f64], served: &[f64], routed: &[f64]) -> Vec<f64> {
    buffers
        .iter()
        .zip(served.iter().zip(routed))
        .map(|(b, (s, r))| (b - s + r).max(0.0))
        .collect()
}

/// Per-time, per-queue routed volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan {
    /// `volumes[t][i]`, leftovers included.
    pub volumes: Vec<Vec<f64>>,
    /// Volume arriving at `t` that found no free capacity before the
    /// horizon; it is routed to the first queue.
    pub leftover: Vec<f64>,
}

impl AllocationPlan {
    /// Routing fractions at `t`; the first queue when nothing arrives.
    pub fn action(&self, t: usize) -> Action {
        let v = &self.volumes[t];
        let total: f64 = v.iter().sum();
        if total <= VOLUME_EPS {
            Action::vertex(v.len(), 0)
        } else {
            Action(v.iter().map(|x| x / total).collect())
        }
    }

    /// `t,arrivals,q1..qd,leftover`.
    pub fn to_csv(&self) -> String {
        let d = self.volumes.first().map_or(0, |v| v.len());
        let mut out = String::from("t,arrivals");
        for i in 1..=d {
            let _ = write!(out, ",q{i}");
        }
        out.push_str(",leftover\n");
        for (t, v) in self.volumes.iter().enumerate() {
            let total: f64 = v.iter().sum();
            let _ = write!(out, "{t},{total}");
            for x in v {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{}", self.leftover[t]);
        }
        out
    }
}

/// Greedy slot filling. Existing buffers first take the earliest capacity of
/// their own queue; then the arrivals of each time `t`, in order, fill the
/// residual capacity of times `t, t+1, ...` (queues in index order within a
/// time). Whatever does not fit before the horizon goes to the first queue.
pub fn greedy_allocate(arrivals: &[f64], capacity: &[Vec<f64>], buffers: &[f64]) -> Result<AllocationPlan> {
    let horizon = arrivals.len();
    let d = buffers.len();
    if capacity.len() != horizon || capacity.iter().any(|c| c.len() != d) {
        return Err(Error::Domain("capacity table must be horizon x queues".into()));
    }
    if arrivals.iter().chain(buffers).chain(capacity.iter().flatten()).any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain("arrivals, capacities and buffers must be nonnegative".into()));
    }
    let mut residual: Vec<Vec<f64>> = capacity.to_vec();
    for (i, &b) in buffers.iter().enumerate() {
        let mut left = b;
        for slot in residual.iter_mut() {
            if left <= VOLUME_EPS {
                break;
            }
            let take = left.min(slot[i]);
            slot[i] -= take;
            left -= take;
        }
    }
    let mut volumes = vec![vec![0.0; d]; horizon];
    let mut leftover = vec![0.0; horizon];
    for t in 0..horizon {
        let mut left = arrivals[t];
        'fill: for slot in residual.iter_mut().skip(t) {
            for i in 0..d {
                if left <= VOLUME_EPS {
                    break 'fill;
                }
                let take = left.min(slot[i]);
                if take > 0.0 {
                    slot[i] -= take;
                    volumes[t][i] += take;
                    left -= take;
                }
            }
        }
        if left > VOLUME_EPS {
            leftover[t] = left;
            volumes[t][0] += left;
        }
    }
    Ok(AllocationPlan { volumes, leftover })
}

/// Buffers `B_0 .. B_T` under `plan`.
pub fn buffer_trace(capacity: &[Vec<f64>], buffers: &[f64], plan: &AllocationPlan) -> Vec<Vec<f64>> {
    let mut out = vec![buffers.to_vec()];
    for (x, y) in capacity.iter().zip(&plan.volumes) {
        let next = queue_step(out.last().unwrap(), x, y);
        out.push(next);
    }
    out
}

/// `sum_{t=1}^{T} sum_i B_t^i` under `plan`.
pub fn plan_cost(capacity: &[Vec<f64>], buffers: &[f64], plan: &AllocationPlan) -> f64 {
    buffer_trace(capacity, buffers, plan)
        .iter()
        .skip(1)
        .map(|b| b.iter().sum::<f64>())
        .sum()
}

#[derive(Clone, Debug)]
pub struct BrokerKernel {
    pub instance: Arc<BrokerInstance>,
    time_dependent: bool,
}

impl KernelMap for BrokerKernel {
    fn eval(&self, t: usize, _a: &Action, _c: &[f64]) -> Kernel {
        self.instance.kernel_at(t)
    }

    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
}

#[derive(Clone, Debug)]
pub struct BrokerEnv {
    pub instance: Arc<BrokerInstance>,
}

impl BrokerEnv {
    fn step(&self, c: &[f64], prev: &[f64], routed: &[f64]) -> Vec<f64> {
        let (_, x) = self.instance.load(prev);
        queue_step(c, &x, routed)
    }
}

/// Largest-remainder rounding of `a * total` to integers summing to `total`;
/// ties go to the lower index.
pub fn round_split(a: &[f64], total: u64) -> Vec<u64> {
    let exact: Vec<f64> = a.iter().map(|p| p.max(0.0) * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let placed: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = exact[i] - out[i] as f64;
        let fj = exact[j] - out[j] as f64;
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(placed) as usize) {
        out[i] += 1;
    }
    out
}

impl EnvMap for BrokerEnv {
    fn eval(&self, c: &[f64], prev: &[f64], _next: &[f64], a: &Action, _t: usize) -> Vec<f64> {
        let (y, _) = self.instance.load(prev);
        let routed: Vec<f64> = a.0.iter().map(|p| p * y).collect();
        self.step(c, prev, &routed)
    }

    fn sample(
        &self,
        c: &[f64],
        prev: &[f64],
        _next: &[f64],
        a: &Action,
        _t: usize,
        particles: u64,
        rng: &mut SimRng,
    ) -> Vec<f64> {
        let n = particles as f64;
        let (y, _) = self.instance.load(prev);
        let tasks = (y * n).round() as u64;
        let routed: Vec<f64> = match self.instance.routing {
            RoutingMode::Fluid => a.0.iter().map(|p| p * y).collect(),
            RoutingMode::Rounded => round_split(&a.0, tasks).iter().map(|&k| k as f64 / n).collect(),
            RoutingMode::Randomized => {
                let mut out = vec![0u64; a.0.len()];
                sample_multinomial(tasks, &a.0, rng, &mut out);
                out.iter().map(|&k| k as f64 / n).collect()
            }
        };
        self.step(c, prev, &routed)
    }
}

/// Optimal limit routing by greedy slot filling from the current state.
#[derive(Clone, Debug)]
pub struct BrokerSolver {
    pub instance: Arc<BrokerInstance>,
}

impl BrokerSolver {
    pub fn plan_from(&self, t: usize, m: &[f64], c: &[f64]) -> Result<AllocationPlan> {
        let (y, x) = self.instance.limit_load(t, m);
        greedy_allocate(&y, &x, c)
    }
}

impl LimitSolver for BrokerSolver {
    fn solve_from(&self, _spec: &ModelSpec, t: usize, m: &[f64], c: &[f64]) -> Result<Vec<Action>> {
        let plan = self.plan_from(t, m, c)?;
        Ok((0..plan.volumes.len()).map(|s| plan.action(s)).collect())
    }
}

/// The mean-field model of an instance: block-diagonal on/off kernel,
/// queue update on the normalized buffers, cost `sum_i C^i` at every time
/// (including the final one) to be minimized over the routing simplex.
pub fn make_model(instance: &BrokerInstance) -> Result<ModelSpec> {
    instance.validate()?;
    let inst = Arc::new(instance.clone());
    let d = inst.num_queues();
    let mut labels = Vec::new();
    let mut seen = vec![0usize; d + 1];
    for c in &inst.classes {
        let (name, slot) = match c.role {
            Role::Source => ("s".to_string(), 0),
            Role::Server(i) => (format!("q{}", i + 1), i + 1),
        };
        let tag = if seen[slot] == 0 { name } else { format!("{name}.{}", seen[slot]) };
        seen[slot] += 1;
        labels.push(format!("{tag}:on"));
        labels.push(format!("{tag}:off"));
    }
    let time_dependent = inst
        .classes
        .iter()
        .any(|c| c.kernels.iter().take(inst.horizon).any(|k| *k != c.kernels[0]));
    let initial = inst.initial_state();
    let (y0, _) = inst.load(initial.measure.weights());
    let source_share: f64 = inst
        .classes
        .iter()
        .filter(|c| c.role == Role::Source)
        .map(|c| c.count)
        .sum::<f64>()
        / inst.base_size();
    let upper = initial
        .context
        .values()
        .iter()
        .fold(0.0f64, |a, b| a.max(*b))
        + (inst.horizon as f64) * source_share.max(y0);
    Ok(ModelSpec {
        states: StateSpace::new(labels)?,
        actions: ActionSet::Simplex { dim: d, pitch: 0.1 },
        context_dim: d,
        kernel: Arc::new(BrokerKernel {
            instance: inst.clone(),
            time_dependent,
        }),
        env: Arc::new(BrokerEnv { instance: inst.clone() }),
        reward: Arc::new(SplitReward::same(ScalarReward::SumContext)),
        horizon: inst.horizon,
        initial,
        sense: Sense::Minimize,
        context_box: Some(vec![(0.0, upper); d]),
        solver: Some(Arc::new(BrokerSolver { instance: inst })),
    })
}

/// `a*`: the optimal limit routing applied open loop.
pub fn a_star(spec: &ModelSpec) -> Result<Policy> {
    let sol = optimize_open_loop(spec, &spec.initial.measure, &spec.initial.context, DEFAULT_SEARCH_BUDGET)?;
    Ok(Policy::OpenLoop(sol.actions))
}

/// `Pi*`: the optimal limit routing recomputed from the observed state.
pub fn pi_star(spec: &ModelSpec) -> Policy {
    Policy::Named("pi-star".into(), Arc::new(ResolvePolicy { spec: spec.clone() }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Jsq,
    Wjsq,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Jsq => "JSQ",
            Baseline::Wjsq => "W-JSQ",
        }
    }
}

/// Per-queue weights: `1` for JSQ, `mu_i X_i` for W-JSQ. W-JSQ falls back
/// to JSQ when no processor is available anywhere.
fn baseline_weights(kind: Baseline, rates: &[f64]) -> Vec<f64> {
    match kind {
        Baseline::Wjsq if rates.iter().any(|r| *r > 0.0) => rates.to_vec(),
        _ => vec![1.0; rates.len()],
    }
}

fn argmin_level(levels: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, l) in levels.enumerate() {
        if l < best.1 {
            best = (i, l);
        }
    }
    best.0
}

/// Queue chosen for a single task: smallest `B_i` (JSQ) or
/// `B_i / (mu_i X_i)` (W-JSQ), lowest index on ties, queues without an
/// available processor skipped by W-JSQ.
pub fn first_choice(kind: Baseline, buffers: &[f64], rates: &[f64]) -> usize {
    let w = baseline_weights(kind, rates);
    argmin_level(buffers.iter().zip(&w).map(|(b, w)| if *w > 0.0 { b / w } else { f64::INFINITY }))
}

/// Routes `tasks` tasks one at a time, each to the currently best queue.
pub fn route_tasks(kind: Baseline, buffers: &[f64], rates: &[f64], tasks: u64) -> Vec<u64> {
    let w = baseline_weights(kind, rates);
    let mut load = buffers.to_vec();
    let mut out = vec![0u64; buffers.len()];
    for _ in 0..tasks {
        let i = argmin_level(load.iter().zip(&w).map(|(b, w)| if *w > 0.0 { b / w } else { f64::INFINITY }));
        load[i] += 1.0;
        out[i] += 1;
    }
    out
}

/// Continuous version of [`route_tasks`]: fills the levels up to a common
/// value.
pub fn route_volume(kind: Baseline, buffers: &[f64], rates: &[f64], volume: f64) -> Vec<f64> {
    let w = baseline_weights(kind, rates);
    let fill = |lambda: f64| -> Vec<f64> {
        buffers
            .iter()
            .zip(&w)
            .map(|(b, w)| if *w > 0.0 { (lambda * w - b).max(0.0) } else { 0.0 })
            .collect()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while fill(hi).iter().sum::<f64>() < volume {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid).iter().sum::<f64>() < volume {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut v = fill(hi);
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x *= volume / s);
    }
    v
}

/// JSQ and W-JSQ as decision rules on the observed state: the tasks that
/// arrive during the step join the shortest (weighted) queue one by one.
#[derive(Clone, Debug)]
pub struct BaselineRule {
    pub kind: Baseline,
    pub instance: Arc<BrokerInstance>,
}

impl DecisionRule for BaselineRule {
    fn decide(&self, _t: usize, state: &SystemState) -> Result<Action> {
        let (y, x) = self.instance.load(state.measure.weights());
        let c = state.context.values();
        let d = self.instance.num_queues();
        let split: Vec<f64> = match state.particles() {
            Some(n) => {
                let n = n as f64;
                let buffers: Vec<f64> = c.iter().map(|b| b * n).collect();
                let rates: Vec<f64> = x.iter().map(|r| r * n).collect();
                route_tasks(self.kind, &buffers, &rates, (y * n).round() as u64)
                    .into_iter()
                    .map(|k| k as f64)
                    .collect()
            }
            None => route_volume(self.kind, c, &x, y),
        };
        let total: f64 = split.iter().sum();
        if total <= 0.0 {
            let rates: Vec<f64> = x.to_vec();
            return Ok(Action::vertex(d, first_choice(self.kind, c, &rates)));
        }
        Ok(Action(split.iter().map(|v| v / total).collect()))
    }
}

pub fn baseline_policy(instance: &BrokerInstance, kind: Baseline) -> Policy {
    Policy::Named(
        kind.name().into(),
        Arc::new(BaselineRule {
            kind,
            instance: Arc::new(instance.clone()),
        }),
    )
}

/// Time-dependent on/off matrices drawn from `seed`: for every class and
/// time, the switch-off and switch-on probabilities are uniform on
/// `[low, high]`.
pub fn random_kernels(classes: usize, horizon: usize, seed: u64, low: f64, high: f64) -> Vec<Vec<OnOff>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classes)
        .map(|_| {
            (0..horizon)
                .map(|_| {
                    let off = rng.gen_range(low..=high);
                    let on = rng.gen_range(low..=high);
                    [[1.0 - off, off], [on, 1.0 - on]]
                })
                .collect()
        })
        .collect()
}
