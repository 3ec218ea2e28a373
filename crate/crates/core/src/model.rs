//! Mean-field MDP model: state space, population measures, context,
//! actions, and the kernel / environment / reward maps that drive a
//! system of `N` exchangeable particles.
//!
//! The one-step limit dynamics are
//!
//! ```text
//! m' = m · K(a, c, t)
//! c' = g(c, m, m', a, t)
//! ```
//!
//! Environment maps receive both the measure before (`prev`) and after
//! (`next`) the particle transition. Generic maps read `next`; models whose
//! environment is driven by the population during the current slot (the
//! grid broker) read `prev`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Probe, Result};
use crate::rng::SimRng;

/// Tolerance on probability rows and measure mass.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on `N * weight` being an integer.
pub const COUNT_TOL: f64 = 1e-9;
/// Tolerance used when testing action membership.
pub const ACTION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("state space must have at least one state".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Config(format!("duplicate state label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// States labelled `s0, s1, ...`.
    pub fn numbered(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("s{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Continuum,
    Particles(u64),
}

/// Proportion of particles in each state: an element of `P_N(S)` or `P(S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationMeasure {
    weights: Vec<f64>,
    resolution: Resolution,
}

impl PopulationMeasure {
    pub fn continuum(weights: Vec<f64>) -> Result<Self> {
        check_probability(&weights).map_err(|d| Error::Domain(format!("measure {d}")))?;
        Ok(Self {
            weights,
            resolution: Resolution::Continuum,
        })
    }

    pub fn with_resolution(weights: Vec<f64>, particles: u64) -> Result<Self> {
        check_probability(&weights).map_err(|d| Error::Domain(format!("measure {d}")))?;
        if particles == 0 {
            return Err(Error::Domain("particle count must be positive".into()));
        }
        let n = particles as f64;
        for (i, w) in weights.iter().enumerate() {
            let c = w * n;
            if (c - c.round()).abs() > COUNT_TOL {
                return Err(Error::Domain(format!(
                    "weight {w} of state {i} is not a multiple of 1/{particles}"
                )));
            }
        }
        Ok(Self {
            weights,
            resolution: Resolution::Particles(particles),
        })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::Domain("empty particle system".into()));
        }
        let nf = n as f64;
        Ok(Self {
            weights: counts.iter().map(|&c| c as f64 / nf).collect(),
            resolution: Resolution::Particles(n),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn particles(&self) -> Option<u64> {
        match self.resolution {
            Resolution::Particles(n) => Some(n),
            Resolution::Continuum => None,
        }
    }

    /// Particle counts, when the measure has a finite resolution.
    pub fn counts(&self) -> Option<Vec<u64>> {
        let n = self.particles()? as f64;
        Some(self.weights.iter().map(|w| (w * n).round() as u64).collect())
    }

    pub fn as_continuum(&self) -> Self {
        Self {
            weights: self.weights.clone(),
            resolution: Resolution::Continuum,
        }
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            weights: vec![1.0 / size as f64; size],
            resolution: Resolution::Continuum,
        }
    }
}

fn check_probability(w: &[f64]) -> std::result::Result<(), String> {
    if w.is_empty() {
        return Err("is empty".into());
    }
    for (i, &x) in w.iter().enumerate() {
        if !x.is_finite() || x < -MASS_TOL {
            return Err(format!("has invalid weight {x} at state {i}"));
        }
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > MASS_TOL * (w.len() as f64).max(1.0) * 10.0 {
        return Err(format!("sums to {s}, not 1"));
    }
    Ok(())
}

/// Shared environment vector `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    values: Vec<f64>,
    bound: Option<f64>,
}

impl Context {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, bound: None }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn with_bound(values: Vec<f64>, bound: f64) -> Result<Self> {
        if bound < 0.0 {
            return Err(Error::Domain(format!("negative context bound {bound}")));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > bound) {
            return Err(Error::Domain(format!("context value {v} exceeds bound {bound}")));
        }
        Ok(Self {
            values,
            bound: Some(bound),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// A point of the action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn scalar(x: f64) -> Self {
        Action(vec![x])
    }

    /// Unit vector `e_i` of the given dimension.
    pub fn vertex(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Action(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Action) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// The compact action set. Continuous sets are searched over a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionSet {
    Finite(Vec<Action>),
    Simplex { dim: usize, pitch: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64>, pitch: f64 },
}

impl ActionSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSet::Finite(points) => {
                if points.is_empty() {
                    return Err(Error::Config("finite action set is empty".into()));
                }
                let dim = points[0].0.len();
                if points.iter().any(|p| p.0.len() != dim) {
                    return Err(Error::Config("finite actions have mixed dimensions".into()));
                }
            }
            ActionSet::Simplex { dim, pitch } => {
                if *dim == 0 {
                    return Err(Error::Config("simplex action set needs dimension >= 1".into()));
                }
                if !(*pitch > 0.0) {
                    return Err(Error::Config(format!("grid pitch must be positive, got {pitch}")));
                }
            }
            ActionSet::Box { lower, upper, pitch } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::Config("box bounds must be nonempty and of equal length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(Error::Config("box lower bound exceeds upper bound".into()));
                }
                if !(*pitch > 0.0) {
                    return Err(Error::Config(format!("grid pitch must be positive, got {pitch}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSet::Finite(points) => points[0].0.len(),
            ActionSet::Simplex { dim, .. } => *dim,
            ActionSet::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        if a.0.len() != self.dim() || a.0.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            ActionSet::Finite(points) => points.iter().any(|p| p.distance(a) <= ACTION_TOL),
            ActionSet::Simplex { .. } => {
                a.0.iter().all(|&x| x >= -ACTION_TOL)
                    && (a.0.iter().sum::<f64>() - 1.0).abs() <= ACTION_TOL * a.0.len() as f64
            }
            ActionSet::Box { lower, upper, .. } => a
                .0
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *x >= l - ACTION_TOL && *x <= u + ACTION_TOL),
        }
    }

    /// Grid points searched by the optimizers. Index order is the
    /// tie-breaking order (smaller index wins).
    pub fn grid(&self) -> Vec<Action> {
        match self {
            ActionSet::Finite(points) => points.clone(),
            ActionSet::Simplex { dim, pitch } => {
                let n = steps(1.0, *pitch);
                let mut out = Vec::new();
                let mut buf = vec![0usize; *dim];
                compositions(n, *dim, 0, &mut buf, &mut |c| {
                    out.push(Action(c.iter().map(|&k| k as f64 / n as f64).collect()));
                });
                out
            }
            ActionSet::Box { lower, upper, pitch } => {
                let axes: Vec<Vec<f64>> = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| {
                        let k = steps(u - l, *pitch);
                        (0..=k)
                            .map(|i| if k == 0 { l } else { l + (u - l) * i as f64 / k as f64 })
                            .collect()
                    })
                    .collect();
                cartesian(&axes).into_iter().map(Action).collect()
            }
        }
    }

    /// Index of `a` in [`ActionSet::grid`], when it is a grid point.
    pub fn grid_index(&self, a: &Action) -> Option<usize> {
        self.grid().iter().position(|p| p.distance(a) <= ACTION_TOL)
    }

    fn random_point(&self, rng: &mut impl Rng) -> Action {
        match self {
            ActionSet::Finite(points) => points[rng.gen_range(0..points.len())].clone(),
            ActionSet::Simplex { dim, .. } => {
                let mut e: Vec<f64> = (0..*dim).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
                let s: f64 = e.iter().sum();
                e.iter_mut().for_each(|x| *x /= s);
                Action(e)
            }
            ActionSet::Box { lower, upper, .. } => Action(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| if u > l { rng.gen_range(l..=u) } else { l })
                    .collect(),
            ),
        }
    }
}

/// Number of grid intervals covering `width` with the given pitch.
pub(crate) fn steps(width: f64, pitch: f64) -> usize {
    if width <= 0.0 {
        0
    } else {
        ((width / pitch) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Enumerates compositions of `n` into `parts` nonnegative parts, first
/// part descending (so `(n, 0, ..)` comes first).
pub(crate) fn compositions(
    n: usize,
    parts: usize,
    pos: usize,
    buf: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if pos + 1 == parts {
        buf[pos] = n;
        f(buf);
        return;
    }
    for k in (0..=n).rev() {
        buf[pos] = k;
        compositions(n - k, parts, pos + 1, buf, f);
    }
}

pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &x in axis {
                let mut p = prefix.clone();
                p.push(x);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Row-stochastic `S x S` transition matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for r in rows {
            assert_eq!(r.len(), size, "kernel must be square");
            data.extend(r);
        }
        Self { size, data }
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.size + j] = v;
    }

    /// Row vector times matrix: `m · K`.
    pub fn left_mul(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, &mi) in m.iter().enumerate() {
            if mi == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(self.row(i)) {
                *o += mi * k;
            }
        }
        out
    }

    /// First row that is not a probability vector, with a description.
    pub fn first_bad_row(&self) -> Option<(usize, String)> {
        for i in 0..self.size {
            let row = self.row(i);
            if let Some((j, x)) = row
                .iter()
                .enumerate()
                .find(|(_, x)| !x.is_finite() || **x < -MASS_TOL || **x > 1.0 + MASS_TOL)
            {
                return Some((i, format!("entry {j} = {x} outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > MASS_TOL * 10.0 {
                return Some((i, format!("row sums to {s}")));
            }
        }
        None
    }
}

/// `(t, a, C) -> K(a, C)` at time `t`.
pub trait KernelMap: Send + Sync + fmt::Debug {
    fn eval(&self, t: usize, action: &Action, context: &[f64]) -> Kernel;

    fn time_dependent(&self) -> bool {
        false
    }
}

/// Environment update `g`.
pub trait EnvMap: Send + Sync + fmt::Debug {
    fn eval(&self, context: &[f64], prev: &[f64], next: &[f64], action: &Action, t: usize) -> Vec<f64>;

    /// Update used by the `particles`-sized stochastic system. Defaults to the
    /// deterministic map; models with extra per-particle randomness in the
    /// environment override it.
    fn sample(
        &self,
        context: &[f64],
        prev: &[f64],
        next: &[f64],
        action: &Action,
        t: usize,
        _particles: u64,
        _rng: &mut SimRng,
    ) -> Vec<f64> {
        self.eval(context, prev, next, action, t)
    }

    fn time_dependent(&self) -> bool {
        false
    }
}

/// Running reward `r_t` and final reward `r_T`.
pub trait RewardMap: Send + Sync + fmt::Debug {
    fn running(&self, t: usize, m: &[f64], c: &[f64]) -> f64;

    fn terminal(&self, m: &[f64], c: &[f64]) -> f64;

    fn time_dependent(&self) -> bool {
        false
    }
}

/// Structure-specific optimizer of the deterministic limit.
pub trait LimitSolver: Send + Sync + fmt::Debug {
    /// Optimal limit actions for times `t..T` starting from `(m, c)` at `t`.
    fn solve_from(&self, spec: &ModelSpec, t: usize, m: &[f64], c: &[f64]) -> Result<Vec<Action>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// `candidate` strictly improves on `incumbent`.
    pub fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Sense::Maximize => candidate > incumbent,
            Sense::Minimize => candidate < incumbent,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Sense::Maximize => f64::NEG_INFINITY,
            Sense::Minimize => f64::INFINITY,
        }
    }
}

/// A class of particles in the base system and how its particles are
/// spread over states at time 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMix {
    /// Number of particles of this class in the base system of size `N0`.
    pub share: f64,
    /// `(state, probability)` pairs summing to one.
    pub split: Vec<(usize, f64)>,
}

/// Initial law: its mean-field limit `(m_0, c_0)` and the class
/// composition used to build systems of any size `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub measure: PopulationMeasure,
    pub context: Context,
    pub classes: Vec<ClassMix>,
    pub base_size: f64,
}

impl InitialState {
    /// Every state is its own class with share equal to its weight.
    pub fn from_measure(measure: PopulationMeasure, context: Context) -> Self {
        let classes = measure
            .weights()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, &w)| ClassMix {
                share: w,
                split: vec![(i, 1.0)],
            })
            .collect();
        Self {
            measure: measure.as_continuum(),
            context,
            classes,
            base_size: 1.0,
        }
    }
}

/// Full definition of a mean-field MDP instance. Immutable once built and
/// cheap to clone (maps are shared).
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub states: StateSpace,
    pub actions: ActionSet,
    pub context_dim: usize,
    pub kernel: Arc<dyn KernelMap>,
    pub env: Arc<dyn EnvMap>,
    pub reward: Arc<dyn RewardMap>,
    pub horizon: usize,
    pub initial: InitialState,
    pub sense: Sense,
    /// Explicit context box `[lo, hi]` per dimension, when known.
    pub context_box: Option<Vec<(f64, f64)>>,
    pub solver: Option<Arc<dyn LimitSolver>>,
}

impl ModelSpec {
    /// Checks structural consistency of the pieces.
    pub fn check(&self) -> Result<()> {
        self.actions.validate()?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let s = self.states.size();
        if self.initial.measure.len() != s {
            return Err(Error::Config(format!(
                "initial measure has {} weights for {} states",
                self.initial.measure.len(),
                s
            )));
        }
        if self.initial.context.dim() != self.context_dim {
            return Err(Error::Config(format!(
                "initial context has dimension {}, expected {}",
                self.initial.context.dim(),
                self.context_dim
            )));
        }
        if let Some(b) = &self.context_box {
            if b.len() != self.context_dim || b.iter().any(|(l, h)| !(l <= h)) {
                return Err(Error::Config("context box does not match the context dimension".into()));
            }
        }
        let total: f64 = self.initial.classes.iter().map(|c| c.share).sum();
        if (total - self.initial.base_size).abs() > 1e-9 * self.initial.base_size.max(1.0) {
            return Err(Error::Config(format!(
                "class shares sum to {total}, base size is {}",
                self.initial.base_size
            )));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }

    pub fn is_time_homogeneous(&self) -> bool {
        !(self.kernel.time_dependent() || self.reward.time_dependent() || self.env.time_dependent())
    }

    pub fn check_action(&self, a: &Action, t: usize) -> Result<()> {
        if self.actions.contains(a) {
            Ok(())
        } else {
            Err(Error::Domain(format!("action {a} at t={t} is outside the action set")))
        }
    }

    /// Reward collected on reaching time `t`: running reward before the
    /// horizon, final reward at it.
    pub fn reward_at(&self, t: usize, m: &[f64], c: &[f64]) -> f64 {
        if t >= self.horizon {
            self.reward.terminal(m, c)
        } else {
            self.reward.running(t, m, c)
        }
    }
}

/// One step of the deterministic limit `Phi_a`.
pub fn mean_field_step(
    spec: &ModelSpec,
    m: &PopulationMeasure,
    c: &Context,
    a: &Action,
    t: usize,
) -> Result<(PopulationMeasure, Context)> {
    spec.check_action(a, t)?;
    let (next, ctx) = limit_step_raw(spec, m.weights(), c.values(), a, t);
    Ok((
        PopulationMeasure {
            weights: next,
            resolution: Resolution::Continuum,
        },
        Context::new(ctx),
    ))
}

/// Unchecked limit step on raw vectors.
pub(crate) fn limit_step_raw(
    spec: &ModelSpec,
    m: &[f64],
    c: &[f64],
    a: &Action,
    t: usize,
) -> (Vec<f64>, Vec<f64>) {
    let k = spec.kernel.eval(t, a, c);
    let next = k.left_mul(m);
    let ctx = spec.env.eval(c, m, &next, a, t);
    (next, ctx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<Probe>,
    /// Empirical Lipschitz constant, for continuity checks.
    pub lipschitz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub probes: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Continuity checks fail above this empirical Lipschitz constant.
pub const LIPSCHITZ_CAP: f64 = 1e6;
/// Environment outputs above this sup-norm count as unbounded.
pub const CONTEXT_CAP: f64 = 1e9;

/// Probes the standing assumptions on `probe_budget` random `(t, a, C)`
/// points. Kernel rows that are not probability vectors are a hard error;
/// everything else is reported per check.
pub fn validate_model(spec: &ModelSpec, probe_budget: usize) -> Result<ValidationReport> {
    if probe_budget == 0 {
        return Err(Error::Domain("probe budget must be at least 1".into()));
    }
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_a551);
    let s = spec.num_states();
    let region = probe_region(spec);
    let grid = spec.actions.grid();

    let mut kernel_l: f64 = 0.0;
    let mut env_l: f64 = 0.0;
    let mut reward_l: f64 = 0.0;
    let mut kernel_witness = None;
    let mut env_witness = None;
    let mut reward_witness = None;
    let mut ctx_sup: f64 = 0.0;
    let mut ctx_witness = None;
    let mut ctx_bad = None;

    for _ in 0..probe_budget {
        let t = rng.gen_range(0..spec.horizon);
        let a = spec.actions.random_point(&mut rng);
        let c: Vec<f64> = region
            .iter()
            .map(|&(l, h)| if h > l { rng.gen_range(l..=h) } else { l })
            .collect();
        let probe = Probe {
            time: t,
            action: a.0.clone(),
            context: c.clone(),
        };
        let k = spec.kernel.eval(t, &a, &c);
        if k.size() != s {
            return Err(Error::Structural {
                row: 0,
                probe,
                detail: format!("kernel has size {}, expected {s}", k.size()),
            });
        }
        if let Some((row, detail)) = k.first_bad_row() {
            return Err(Error::Structural { row, probe, detail });
        }

        // nearby action: closest other grid point, or a small perturbation
        let b = nearby_action(&spec.actions, &grid, &a, &mut rng);
        let gap = a.distance(&b);
        let m = random_measure(s, &mut rng);
        if gap > 0.0 {
            let k2 = spec.kernel.eval(t, &b, &c);
            if let Some((row, detail)) = k2.first_bad_row() {
                return Err(Error::Structural {
                    row,
                    probe: Probe {
                        time: t,
                        action: b.0.clone(),
                        context: c.clone(),
                    },
                    detail,
                });
            }
            let dk = max_abs_diff(&k.data, &k2.data) / gap;
            if dk > kernel_l || kernel_witness.is_none() {
                kernel_l = kernel_l.max(dk);
                kernel_witness = Some(probe.clone());
            }
            let next_a = k.left_mul(&m);
            let next_b = k2.left_mul(&m);
            let ga = spec.env.eval(&c, &m, &next_a, &a, t);
            let gb = spec.env.eval(&c, &m, &next_b, &b, t);
            let dg = max_abs_diff(&ga, &gb) / gap;
            if dg > env_l || env_witness.is_none() {
                env_l = env_l.max(dg);
                env_witness = Some(probe.clone());
            }
        }

        let next = k.left_mul(&m);
        let g = spec.env.eval(&c, &m, &next, &a, t);
        if g.len() != spec.context_dim {
            return Err(Error::Config(format!(
                "environment map returned {} values, expected {}",
                g.len(),
                spec.context_dim
            )));
        }
        let sup = g.iter().fold(0.0f64, |acc, v| if v.is_finite() { acc.max(v.abs()) } else { f64::INFINITY });
        if sup > ctx_sup || ctx_witness.is_none() {
            ctx_sup = ctx_sup.max(sup);
            ctx_witness = Some(probe.clone());
        }
        if sup > CONTEXT_CAP && ctx_bad.is_none() {
            ctx_bad = Some(probe.clone());
        }

        // reward continuity in the measure
        let m2 = perturb_measure(&m, 1e-4, &mut rng);
        let dm = max_abs_diff(&m, &m2);
        if dm > 0.0 {
            let r1 = spec.reward.running(t, &m, &c);
            let r2 = spec.reward.running(t, &m2, &c);
            let dr = (r1 - r2).abs() / dm;
            if dr > reward_l || reward_witness.is_none() {
                reward_l = reward_l.max(if dr.is_finite() { dr } else { f64::INFINITY });
                reward_witness = Some(probe.clone());
            }
        }
    }

    let continuity = |name, l: f64, witness: Option<Probe>, what: &str| CheckOutcome {
        name,
        passed: l.is_finite() && l <= LIPSCHITZ_CAP,
        detail: format!("{what}: empirical Lipschitz constant {l}"),
        witness,
        lipschitz: Some(l),
    };
    let mut checks = vec![
        CheckOutcome {
            name: "kernel-stochastic",
            passed: true,
            detail: format!("all kernel rows are probability vectors over {probe_budget} probes"),
            witness: None,
            lipschitz: None,
        },
        continuity("kernel-continuity", kernel_l, kernel_witness, "kernel in the action"),
        continuity("env-continuity", env_l, env_witness, "environment map in the action"),
        continuity("reward-continuity", reward_l, reward_witness, "running reward in the measure"),
    ];
    checks.push(CheckOutcome {
        name: "context-bounded",
        passed: ctx_bad.is_none(),
        detail: format!("largest environment output sup-norm {ctx_sup}"),
        witness: ctx_bad.or(ctx_witness),
        lipschitz: None,
    });
    checks.push(CheckOutcome {
        name: "initial-bounded",
        passed: spec.initial.context.sup_norm().is_finite(),
        detail: format!("initial context sup-norm {}", spec.initial.context.sup_norm()),
        witness: None,
        lipschitz: None,
    });
    Ok(ValidationReport {
        probes: probe_budget,
        checks,
    })
}

fn probe_region(spec: &ModelSpec) -> Vec<(f64, f64)> {
    match &spec.context_box {
        Some(b) => b.clone(),
        None => spec
            .initial
            .context
            .values()
            .iter()
            .map(|&c| {
                let r = c.abs().max(1.0);
                (c - r, c + r)
            })
            .collect(),
    }
}

fn nearby_action(set: &ActionSet, grid: &[Action], a: &Action, rng: &mut impl Rng) -> Action {
    match set {
        ActionSet::Finite(_) => grid
            .iter()
            .filter(|p| p.distance(a) > ACTION_TOL)
            .min_by(|x, y| x.distance(a).total_cmp(&y.distance(a)))
            .cloned()
            .unwrap_or_else(|| a.clone()),
        ActionSet::Simplex { .. } => {
            // move a little mass between two coordinates
            let d = a.0.len();
            if d < 2 {
                return a.clone();
            }
            let i = a.0.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).map(|x| x.0).unwrap_or(0);
            let j = (i + 1 + rng.gen_range(0..d - 1)) % d;
            let eps = (a.0[i] * 0.01).min(1e-3);
            let mut b = a.0.clone();
            b[i] -= eps;
            b[j] += eps;
            Action(b)
        }
        ActionSet::Box { lower, upper, .. } => Action(
            a.0.iter()
                .zip(lower.iter().zip(upper))
                .map(|(&x, (&l, &u))| {
                    let eps = ((u - l) * 1e-3).max(0.0);
                    if x + eps <= u {
                        x + eps
                    } else {
                        (x - eps).max(l)
                    }
                })
                .collect(),
        ),
    }
}

fn random_measure(s: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut e: Vec<f64> = (0..s).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= total);
    e
}

fn perturb_measure(m: &[f64], eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    if m.len() < 2 {
        return m.to_vec();
    }
    let i = rng.gen_range(0..m.len());
    let j = (i + 1) % m.len();
    let mut out = m.to_vec();
    let d = eps.min(out[i]);
    out[i] -= d;
    out[j] += d;
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ConstantEnv, ConstantKernel, ScalarReward, SplitReward};

    fn two_state(kernel: Kernel, actions: ActionSet) -> ModelSpec {
        ModelSpec {
            states: StateSpace::numbered(2).unwrap(),
            actions,
            context_dim: 1,
            kernel: Arc::new(ConstantKernel(kernel)),
            env: Arc::new(ConstantEnv),
            reward: Arc::new(SplitReward::same(ScalarReward::Weight { state: 0 })),
            horizon: 3,
            initial: InitialState::from_measure(
                PopulationMeasure::continuum(vec![0.3, 0.7]).unwrap(),
                Context::new(vec![1.0]),
            ),
            sense: Sense::Maximize,
            context_box: None,
            solver: None,
        }
    }

    fn single_action() -> ActionSet {
        ActionSet::Finite(vec![Action::scalar(0.0), Action::scalar(1.0)])
    }

    #[test]
    fn identity_kernel_passes_all_checks() {
        let spec = two_state(Kernel::identity(2), single_action());
        let report = validate_model(&spec, 10).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.check("kernel-continuity").unwrap().lipschitz, Some(0.0));
    }

    #[test]
    fn row_summing_to_one_and_a_half_is_structural_error() {
        let k = Kernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 1.0]]);
        let spec = two_state(k, single_action());
        match validate_model(&spec, 10) {
            Err(Error::Structural { row, detail, .. }) => {
                assert_eq!(row, 1);
                assert!(detail.contains("1.5"), "{detail}");
            }
            other => panic!("expected structural error, got {other:?}"),
        }
    }

    #[test]
    fn negative_probability_is_structural_error() {
        let k = Kernel::from_rows(vec![vec![-0.5, 1.5], vec![0.5, 0.5]]);
        let spec = two_state(k, single_action());
        assert!(matches!(validate_model(&spec, 3), Err(Error::Structural { row: 0, .. })));
    }

    #[test]
    fn zero_budget_rejected() {
        let spec = two_state(Kernel::identity(2), single_action());
        assert!(matches!(validate_model(&spec, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn step_by_hand() {
        let k = Kernel::from_rows(vec![vec![0.5, 0.5], vec![0.2, 0.8]]);
        let spec = two_state(k, single_action());
        let m = PopulationMeasure::continuum(vec![1.0, 0.0]).unwrap();
        let (m1, c1) = mean_field_step(&spec, &m, &Context::new(vec![2.0]), &Action::scalar(0.0), 0).unwrap();
        assert_eq!(m1.weights(), &[0.5, 0.5]);
        assert_eq!(c1.values(), &[2.0]);
    }

    #[test]
    fn identity_step_is_fixed_point() {
        let spec = two_state(Kernel::identity(2), single_action());
        let m = PopulationMeasure::continuum(vec![0.25, 0.75]).unwrap();
        let c = Context::new(vec![-3.0]);
        let (m1, c1) = mean_field_step(&spec, &m, &c, &Action::scalar(1.0), 2).unwrap();
        assert_eq!(m1.weights(), m.weights());
        assert_eq!(c1, c);
    }

    #[test]
    fn action_outside_set_is_domain_error() {
        let spec = two_state(Kernel::identity(2), single_action());
        let m = PopulationMeasure::continuum(vec![1.0, 0.0]).unwrap();
        let r = mean_field_step(&spec, &m, &Context::new(vec![0.0]), &Action::scalar(0.5), 0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn measure_invariants() {
        assert!(PopulationMeasure::continuum(vec![0.5, 0.6]).is_err());
        assert!(PopulationMeasure::with_resolution(vec![0.5, 0.5], 3).is_err());
        let m = PopulationMeasure::with_resolution(vec![0.25, 0.75], 4).unwrap();
        assert_eq!(m.counts(), Some(vec![1, 3]));
        assert!(StateSpace::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Context::with_bound(vec![2.0], 1.0).is_err());
    }

    #[test]
    fn simplex_grid_points_sum_to_one() {
        let set = ActionSet::Simplex { dim: 3, pitch: 0.25 };
        let g = set.grid();
        assert_eq!(g.len(), 15);
        assert_eq!(g[0], Action(vec![1.0, 0.0, 0.0]));
        assert!(g.iter().all(|a| set.contains(a)));
        let b = ActionSet::Box {
            lower: vec![0.0, -1.0],
            upper: vec![1.0, 1.0],
            pitch: 0.5,
        };
        assert_eq!(b.grid().len(), 3 * 5);
        assert!(set.validate().is_ok());
        assert!(ActionSet::Simplex { dim: 2, pitch: 0.0 }.validate().is_err());
    }
}
