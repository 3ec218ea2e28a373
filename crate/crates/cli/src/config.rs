//! JSON configuration schema.
//!
//! A config holds either a generic `model` or a `broker` instance, plus an
//! optional `experiment` section whose scalars can be overridden by flags.
//!
//! ```json
//! {
//!   "model": {
//!     "states": ["on", "off"],
//!     "actions": { "finite": [[0], [1]] },
//!     "context_dim": 0,
//!     "kernel": { "name": "per-action", "params": { "matrices": [...] } },
//!     "env": { "name": "none" },
//!     "reward": { "name": "weight", "params": { "state": 0 } },
//!     "horizon": 3,
//!     "initial": { "measure": [0.5, 0.5], "context": [] },
//!     "sense": "maximize"
//!   },
//!   "experiment": { "seed": 1, "replications": 100, "n_list": [10, 100] }
//! }
//! ```
//!
//! `states` is a label list or a state count. `reward` is a single named
//! reward used for every time, or `{ "running": ..., "terminal": ... }`.
//! `initial.classes` (list of `{ "share", "split": [[state, p], ...] }`)
//! and `initial.base_size` describe how finite systems are built; by
//! default every state with positive weight is its own class.
//!
//! A broker is either `{ "preset": "three-queue" }` or
//!
//! ```json
//! {
//!   "sources": 3,
//!   "queues": [{ "processors": 1, "speed": 0.5 }, ...],
//!   "kernel_seed": 8, "kernel_range": [0.02, 0.98],
//!   "horizon": 10, "initial_buffers": [0, 0, 0, 0, 0],
//!   "routing": "randomized"
//! }
//! ```
//!
//! with `kernels` (one list of 2x2 on/off matrices per class, sources
//! first) accepted instead of `kernel_seed`.

use std::path::Path;

use mfmdp::broker::{self, BrokerInstance, OnOff, RoutingMode};
use mfmdp::catalog::{self, Named, SplitReward};
use mfmdp::model::{ClassMix, InitialState};
use mfmdp::{Action, ActionSet, Context, Error, ModelSpec, PopulationMeasure, Sense, StateSpace};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelConfig>,
    pub broker: Option<BrokerConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StatesConfig {
    Count(usize),
    Labels(Vec<String>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ActionsConfig {
    Finite(Vec<Vec<f64>>),
    Simplex { dim: usize, pitch: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64>, pitch: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum RewardConfig {
    Split { running: Named, terminal: Named },
    Same(Named),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub share: f64,
    pub split: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub measure: Vec<f64>,
    #[serde(default)]
    pub context: Vec<f64>,
    pub classes: Option<Vec<ClassConfig>>,
    pub base_size: Option<f64>,
}

fn default_env() -> Named {
    Named::new("none", serde_json::Value::Null)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub states: StatesConfig,
    pub actions: ActionsConfig,
    #[serde(default)]
    pub context_dim: usize,
    pub kernel: Named,
    #[serde(default = "default_env")]
    pub env: Named,
    pub reward: RewardConfig,
    pub horizon: usize,
    pub initial: InitialConfig,
    #[serde(default)]
    pub sense: SenseConfig,
    pub context_box: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseConfig {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    pub processors: f64,
    pub speed: f64,
}

fn default_range() -> (f64, f64) {
    (0.1, 0.9)
}

fn default_on() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub sources: f64,
    #[serde(default)]
    pub queues: Vec<QueueConfig>,
    pub kernels: Option<Vec<Vec<OnOff>>>,
    pub kernel_seed: Option<u64>,
    #[serde(default = "default_range")]
    pub kernel_range: (f64, f64),
    #[serde(default)]
    pub horizon: usize,
    #[serde(default)]
    pub initial_buffers: Vec<f64>,
    pub routing: Option<RoutingMode>,
    #[serde(default = "default_on")]
    pub initial_on: f64,
}

/// Experiment settings. Every field has a command-line override.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub n_list: Vec<u64>,
    pub grid_pitch_m: f64,
    pub grid_pitch_c: f64,
    pub fd_step: f64,
    pub max_states: u64,
    /// Policy simulated by `simulate` and `clt`: `a-star`, `pi-star`,
    /// `pi-grid`, `jsq`, `w-jsq`, or `actions` (uses `actions`).
    pub policy: String,
    pub actions: Vec<Vec<f64>>,
    /// Enables discounted value iteration in `meanfield`.
    pub discount: Option<f64>,
    pub vi_tolerance: f64,
    pub probe_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replications: 100,
            n_list: Vec::new(),
            grid_pitch_m: 0.1,
            grid_pitch_c: 0.1,
            fd_step: mfmdp::clt::DEFAULT_FD_STEP,
            max_states: mfmdp::oracle::DEFAULT_MAX_STATES as u64,
            policy: "a-star".into(),
            actions: Vec::new(),
            discount: None,
            vi_tolerance: 1e-10,
            probe_budget: 100,
        }
    }
}

/// A parsed config together with the raw bytes it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub bytes: Vec<u8>,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = parse(&bytes)?;
    Ok(LoadedConfig { config, bytes })
}

pub fn parse(bytes: &[u8]) -> Result<Config, CliError> {
    let config: Config = serde_json::from_slice(bytes).map_err(|e| CliError::Schema(e.to_string()))?;
    match (&config.model, &config.broker) {
        (Some(_), Some(_)) => Err(CliError::Schema("config has both `model` and `broker`".into())),
        (None, None) => Err(CliError::Schema("config needs a `model` or a `broker` section".into())),
        _ => Ok(config),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec, Error> {
        let states = match &self.states {
            StatesConfig::Count(n) => StateSpace::numbered(*n)?,
            StatesConfig::Labels(l) => StateSpace::new(l.clone())?,
        };
        let s = states.size();
        let k = self.context_dim;
        let actions = match &self.actions {
            ActionsConfig::Finite(p) => ActionSet::Finite(p.iter().map(|a| Action(a.clone())).collect()),
            ActionsConfig::Simplex { dim, pitch } => ActionSet::Simplex {
                dim: *dim,
                pitch: *pitch,
            },
            ActionsConfig::Box { lower, upper, pitch } => ActionSet::Box {
                lower: lower.clone(),
                upper: upper.clone(),
                pitch: *pitch,
            },
        };
        let reward = match &self.reward {
            RewardConfig::Same(n) => SplitReward::same(catalog::scalar_reward(n, s, k)?),
            RewardConfig::Split { running, terminal } => SplitReward {
                running: catalog::scalar_reward(running, s, k)?,
                terminal: catalog::scalar_reward(terminal, s, k)?,
            },
        };
        let measure = PopulationMeasure::continuum(self.initial.measure.clone())?;
        let context = Context::new(self.initial.context.clone());
        let initial = match &self.initial.classes {
            None => InitialState::from_measure(measure, context),
            Some(classes) => {
                let classes: Vec<ClassMix> = classes
                    .iter()
                    .map(|c| ClassMix {
                        share: c.share,
                        split: c.split.clone(),
                    })
                    .collect();
                let base_size = self
                    .initial
                    .base_size
                    .unwrap_or_else(|| classes.iter().map(|c| c.share).sum());
                InitialState {
                    measure,
                    context,
                    classes,
                    base_size,
                }
            }
        };
        let spec = ModelSpec {
            states,
            actions,
            context_dim: k,
            kernel: catalog::kernel(&self.kernel, s)?,
            env: catalog::env(&self.env, s, k)?,
            reward: std::sync::Arc::new(reward),
            horizon: self.horizon,
            initial,
            sense: match self.sense {
                SenseConfig::Maximize => Sense::Maximize,
                SenseConfig::Minimize => Sense::Minimize,
            },
            context_box: self.context_box.clone(),
            solver: None,
        };
        spec.check()?;
        Ok(spec)
    }
}

impl BrokerConfig {
    pub fn build(&self) -> Result<BrokerInstance, Error> {
        let mut inst = match self.preset.as_deref() {
            Some("three-queue") => BrokerInstance::three_queue(),
            Some(other) => return Err(Error::Config(format!("unknown broker preset {other:?}"))),
            None => {
                let queues: Vec<(f64, f64)> = self.queues.iter().map(|q| (q.processors, q.speed)).collect();
                let kernels = match (&self.kernels, self.kernel_seed) {
                    (Some(k), None) => k.clone(),
                    (None, Some(seed)) => {
                        let (lo, hi) = self.kernel_range;
                        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                            return Err(Error::Config("kernel_range must satisfy 0 <= low <= high <= 1".into()));
                        }
                        broker::random_kernels(queues.len() + 1, self.horizon, seed, lo, hi)
                    }
                    _ => return Err(Error::Config("broker needs exactly one of `kernels` and `kernel_seed`".into())),
                };
                let mut inst =
                    BrokerInstance::standard(self.sources, &queues, kernels, self.horizon, self.initial_buffers.clone())?;
                for c in &mut inst.classes {
                    c.initial_on = self.initial_on;
                }
                inst
            }
        };
        if let Some(r) = self.routing {
            inst.routing = r;
        }
        inst.validate()?;
        Ok(inst)
    }
}

/// The model a config describes, plus the broker instance when there is one.
pub struct Built {
    pub spec: ModelSpec,
    pub broker: Option<BrokerInstance>,
}

impl Config {
    pub fn build(&self) -> Result<Built, Error> {
        match (&self.model, &self.broker) {
            (Some(m), _) => Ok(Built {
                spec: m.build()?,
                broker: None,
            }),
            (None, Some(b)) => {
                let inst = b.build()?;
                Ok(Built {
                    spec: broker::make_model(&inst)?,
                    broker: Some(inst),
                })
            }
            (None, None) => Err(Error::Config("config needs a `model` or a `broker` section".into())),
        }
    }
}
