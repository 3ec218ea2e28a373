//! Command-line front end for `mfmdp`.
//!
//! Every subcommand reads a JSON config (see [`config`]), writes its CSV
//! outputs to `--out-dir` and records a `manifest.json` with the seed, the
//! config hash, the effective settings and a hash of every output. Runs
//! with the same manifest inputs produce byte-identical files whatever the
//! thread count.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mfmdp::broker::{self, Baseline};
use mfmdp::clt;
use mfmdp::grid::{context_envelope, ContextLattice};
use mfmdp::meanfield::{self, GridPolicy, ResolvePolicy, DEFAULT_SEARCH_BUDGET};
use mfmdp::oracle;
use mfmdp::rng::SeedStreams;
use mfmdp::sim::{self, Policy, RewardEstimate};
use mfmdp::{Action, ModelSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{Built, ExperimentConfig, LoadedConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mfmdp::Error),
}

impl CliError {
    /// Short machine-readable kind, printed as `error[<kind>]`.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) => "schema",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                mfmdp::Error::Config(_) => "config",
                mfmdp::Error::Size { .. } => "size-cap",
                mfmdp::Error::Budget { .. } => "budget",
                mfmdp::Error::Structural { .. } => "structural",
                mfmdp::Error::Domain(_) => "domain",
                mfmdp::Error::Assumption(_) => "assumption",
                mfmdp::Error::Invariant(_) => "invariant",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "schema" | "config" | "usage" => 2,
            "size-cap" | "budget" => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfmdp", version, about = "Mean-field MDP optimization and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe the model assumptions.
    Validate(Common),
    /// Monte Carlo estimates of the configured policy for every N.
    Simulate(Common),
    /// Limit trajectory, optimal open-loop actions and the value grid.
    Meanfield {
        #[command(flatten)]
        common: Common,
        /// Skip backward induction on the grid.
        #[arg(long)]
        skip_grid: bool,
    },
    /// Exact optimal values of small systems.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Only print the initial-state values.
        #[arg(long)]
        value_only: bool,
    },
    /// Covariance propagation and scaled reward gaps.
    Clt(Common),
    /// Costs of a*, Pi*, JSQ and W-JSQ over the N list.
    BrokerExperiment {
        #[command(flatten)]
        common: Common,
        /// Only compute the allocation plan of the base system.
        #[arg(long)]
        plan_only: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file.
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated system sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub grid_pitch_m: Option<f64>,
    #[arg(long)]
    pub grid_pitch_c: Option<f64>,
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub max_states: Option<u64>,
    /// Worker threads (does not affect results).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    fn settings(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut s = base.clone();
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.replications {
            s.replications = v;
        }
        if let Some(v) = &self.n_list {
            s.n_list = v.clone();
        }
        if let Some(v) = self.grid_pitch_m {
            s.grid_pitch_m = v;
        }
        if let Some(v) = self.grid_pitch_c {
            s.grid_pitch_c = v;
        }
        if let Some(v) = self.fd_step {
            s.fd_step = v;
        }
        if let Some(v) = self.max_states {
            s.max_states = v;
        }
        s
    }
}

/// Result of a run: the lines printed on stdout and whether the command
/// succeeded on its own terms (a failed validation exits nonzero).
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: String,
    pub ok: bool,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

struct Outputs {
    files: Vec<(String, String)>,
    summary: String,
    ok: bool,
    flags: serde_json::Value,
}

impl Outputs {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            summary: String::new(),
            ok: true,
            flags: serde_json::json!({}),
        }
    }

    fn file(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    config_sha256: String,
    seed: u64,
    settings: &'a ExperimentConfig,
    flags: &'a serde_json::Value,
    outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn run(cli: Cli) -> Result<RunOutcome, CliError> {
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Meanfield { common, .. } => ("meanfield", common),
        Command::Oracle { common, .. } => ("oracle", common),
        Command::Clt(c) => ("clt", c),
        Command::BrokerExperiment { common, .. } => ("broker-experiment", common),
    };
    let loaded = config::load(&common.config)?;
    let settings = common.settings(&loaded.config.experiment);
    let work = || -> Result<Outputs, CliError> {
        let built = loaded.config.build()?;
        match &cli.command {
            Command::Validate(_) => validate(&built, &settings),
            Command::Simulate(_) => simulate(&built, &settings),
            Command::Meanfield { skip_grid, .. } => meanfield_cmd(&built, &settings, *skip_grid),
            Command::Oracle { value_only, .. } => oracle_cmd(&built, &settings, *value_only),
            Command::Clt(_) => clt_cmd(&built, &settings),
            Command::BrokerExperiment { plan_only, .. } => broker_experiment(&built, &settings, *plan_only),
        }
    };
    let outputs = match common.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    write_outputs(name, &loaded, &settings, &common.out_dir, outputs)
}

fn write_outputs(
    command: &str,
    loaded: &LoadedConfig,
    settings: &ExperimentConfig,
    dir: &Path,
    outputs: Outputs,
) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut entries = Vec::new();
    for (name, content) in &outputs.files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        entries.push(OutputEntry {
            file: name.clone(),
            sha256: sha256_hex(content.as_bytes()),
        });
    }
    let manifest = Manifest {
        tool: "mfmdp",
        version: env!("CARGO_PKG_VERSION"),
        core_version: mfmdp::VERSION,
        command,
        config_sha256: sha256_hex(&loaded.bytes),
        seed: settings.seed,
        settings,
        flags: &outputs.flags,
        outputs: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut files: Vec<String> = outputs.files.into_iter().map(|f| f.0).collect();
    files.push("manifest.json".into());
    Ok(RunOutcome {
        summary: outputs.summary,
        ok: outputs.ok,
        out_dir: dir.to_path_buf(),
        files,
    })
}

fn need_n_list(s: &ExperimentConfig) -> Result<(), CliError> {
    if s.n_list.is_empty() {
        return Err(CliError::Usage("an N list is required (--n-list or experiment.n_list)".into()));
    }
    Ok(())
}

fn a_star_actions(spec: &ModelSpec) -> Result<Vec<Action>, CliError> {
    let sol = meanfield::optimize_open_loop(spec, &spec.initial.measure, &spec.initial.context, DEFAULT_SEARCH_BUDGET)?;
    Ok(sol.actions)
}

fn make_policy(built: &Built, s: &ExperimentConfig) -> Result<Policy, CliError> {
    let spec = &built.spec;
    let broker_only = |kind: Baseline| -> Result<Policy, CliError> {
        let inst = built
            .broker
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("policy {} needs a broker config", kind.name())))?;
        Ok(broker::baseline_policy(inst, kind))
    };
    Ok(match s.policy.as_str() {
        "a-star" => Policy::OpenLoop(a_star_actions(spec)?),
        "pi-star" if spec.solver.is_some() => {
            Policy::Named("pi-star".into(), Arc::new(ResolvePolicy { spec: spec.clone() }))
        }
        "pi-star" | "pi-grid" => {
            let grid = meanfield::backward_induction_grid(spec, s.grid_pitch_m, s.grid_pitch_c)?;
            Policy::Named(
                "pi-grid".into(),
                Arc::new(GridPolicy {
                    spec: spec.clone(),
                    grid: Arc::new(grid),
                }),
            )
        }
        "jsq" => broker_only(Baseline::Jsq)?,
        "w-jsq" => broker_only(Baseline::Wjsq)?,
        "actions" => Policy::OpenLoop(s.actions.iter().map(|a| Action(a.clone())).collect()),
        other => return Err(CliError::Usage(format!("unknown policy {other:?}"))),
    })
}

fn validate(built: &Built, s: &ExperimentConfig) -> Result<Outputs, CliError> {
    let report = mfmdp::validate_model(&built.spec, s.probe_budget)?;
    let mut out = Outputs::new();
    let mut csv = String::from("check,passed,lipschitz,detail\n");
    for c in &report.checks {
        let lip = c.lipschitz.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},\"{}\"", c.name, c.passed, lip, c.detail.replace('"', "'"));
        out.line(format!("{:<24} {}", c.name, if c.passed { "pass" } else { "FAIL" }));
    }
    out.ok = report.passed();
    out.line(if out.ok { "model: pass" } else { "model: FAIL" });
    out.file("validation.csv", csv);
    Ok(out)
}

fn simulate(built: &Built, s: &ExperimentConfig) -> Result<Outputs, CliError> {
    need_n_list(s)?;
    let spec = &built.spec;
    let policy = make_policy(built, s)?;
    let streams = SeedStreams::new(s.seed);
    let mut rows = Vec::new();
    let mut out = Outputs::new();
    for &n in &s.n_list {
        let est = sim::estimate_reward(spec, &policy, n, s.replications, streams.child(n).master())?;
        out.line(format!("N={n} mean={} stderr={}", est.mean, est.stderr));
        rows.push((policy.label(), n, est));
    }
    let first = s.n_list[0];
    let traj = sim::simulate_trajectory(spec, &policy, first, streams.child(first).master())?;
    out.file("estimates.csv", sim::estimates_csv(&rows));
    out.file("trajectory.csv", sim::trajectory_csv(spec, &traj));
    Ok(out)
}

fn discounted_csv(spec: &ModelSpec, sol: &meanfield::DiscountedSolution) -> String {
    let mut out = String::from("node");
    for l in spec.states.labels() {
        let _ = write!(out, ",m_{l}");
    }
    for k in 0..spec.context_dim {
        let _ = write!(out, ",c_{k}");
    }
    out.push_str(",value,argmax\n");
    for (i, v) in sol.values.iter().enumerate() {
        let (m, c) = sol.grid.node(i);
        let _ = write!(out, "{i}");
        for x in m.iter().chain(c.iter()) {
            let _ = write!(out, ",{x}");
        }
        let _ = writeln!(out, ",{v},{}", sol.argmax[i]);
    }
    out
}

fn meanfield_cmd(built: &Built, s: &ExperimentConfig, skip_grid: bool) -> Result<Outputs, CliError> {
    let spec = &built.spec;
    let mut out = Outputs::new();
    out.flags = serde_json::json!({ "skip_grid": skip_grid });
    let actions = a_star_actions(spec)?;
    let traj = meanfield::iterate_limit(spec, &actions, &spec.initial.measure, &spec.initial.context)?;
    out.line(format!("v*(a*) = {}", traj.reward));
    out.file("limit.csv", traj.to_csv(spec));
    if !skip_grid {
        let grid = meanfield::backward_induction_grid(spec, s.grid_pitch_m, s.grid_pitch_c)?;
        out.line(format!("grid value at (m0, c0) = {}", grid.initial_value(spec)));
        out.file("value_grid.csv", grid.to_csv(spec));
        let meta = serde_json::json!({
            "horizon": grid.horizon(),
            "grid_pitch_m": s.grid_pitch_m,
            "grid_pitch_c": s.grid_pitch_c,
            "context_box": grid.context_box,
            "actions": grid.actions.iter().map(|a| a.0.clone()).collect::<Vec<_>>(),
        });
        out.file("value_grid.json", serde_json::to_string_pretty(&meta).unwrap_or_default() + "\n");
    }
    if let Some(delta) = s.discount {
        let sol = meanfield::value_iteration_discounted(spec, delta, s.grid_pitch_m, s.grid_pitch_c, s.vi_tolerance)?;
        out.line(format!(
            "discounted value at (m0, c0) = {} (residual {}, {} sweeps)",
            sol.value_at(spec.initial.measure.weights(), spec.initial.context.values()),
            sol.bellman_residual,
            sol.iterations
        ));
        out.file("discounted.csv", discounted_csv(spec, &sol));
    }
    Ok(out)
}

fn oracle_cmd(built: &Built, s: &ExperimentConfig, value_only: bool) -> Result<Outputs, CliError> {
    need_n_list(s)?;
    let spec = &built.spec;
    let bounds = context_envelope(spec, s.grid_pitch_m)?;
    let lattice = ContextLattice::new(&bounds, s.grid_pitch_c)?;
    let mut out = Outputs::new();
    out.flags = serde_json::json!({ "value_only": value_only });
    let mut csv = String::from("N,value\n");
    let mut last = None;
    for &n in &s.n_list {
        let table = oracle::solve_exact(spec, n, &lattice, s.max_states as u128)?;
        let _ = writeln!(csv, "{n},{}", table.initial_value);
        out.line(if value_only {
            format!("{}", table.initial_value)
        } else {
            format!("N={n} V*={}", table.initial_value)
        });
        last = Some(table);
    }
    out.file("oracle.csv", csv);
    if let (Some(table), false) = (last, value_only) {
        out.file("oracle_table.csv", table.to_csv(spec));
    }
    Ok(out)
}

fn gamma_and_variance(
    spec: &ModelSpec,
    actions: &[Action],
    fd_step: f64,
) -> Result<(Vec<clt::CovarianceState>, clt::RewardGapVariance), CliError> {
    let traj = meanfield::iterate_limit(spec, actions, &spec.initial.measure, &spec.initial.context)?;
    let gamma0 = clt::initial_covariance(spec);
    let covs = clt::propagate_covariance(spec, &traj, &gamma0, fd_step)?;
    let var = clt::reward_gap_gaussian(spec, &traj, &covs, fd_step)?;
    Ok((covs, var))
}

fn clt_cmd(built: &Built, s: &ExperimentConfig) -> Result<Outputs, CliError> {
    need_n_list(s)?;
    let spec = &built.spec;
    let mut out = Outputs::new();
    let actions = a_star_actions(spec)?;
    let v_star = meanfield::iterate_limit(spec, &actions, &spec.initial.measure, &spec.initial.context)?.reward;
    let (covs, var) = gamma_and_variance(spec, &actions, s.fd_step)?;
    out.file("gamma_t.csv", clt::gamma_csv(&covs));
    let mut vcsv = String::from("t,per_step,cumulative\n");
    for (t, (p, c)) in var.per_step.iter().zip(&var.cumulative).enumerate() {
        let _ = writeln!(vcsv, "{},{p},{c}", t + 1);
    }
    out.file("reward_variance.csv", vcsv);
    out.line(format!("v* = {v_star}; limiting variance of sqrt(N)(R^N - r) = {}", var.total));
    let policy = make_policy(built, s)?;
    let series = clt::scaled_gap_series(spec, &policy, v_star, &s.n_list, s.replications, s.seed)?;
    for r in &series.records {
        out.line(format!("N={} scaled_gap={} stderr={}", r.n, r.scaled_gap, r.stderr));
    }
    out.file("clt.csv", series.to_csv());
    Ok(out)
}

fn broker_experiment(built: &Built, s: &ExperimentConfig, plan_only: bool) -> Result<Outputs, CliError> {
    let inst = built
        .broker
        .as_ref()
        .ok_or_else(|| CliError::Usage("broker-experiment needs a broker config".into()))?;
    let spec = &built.spec;
    let mut out = Outputs::new();
    out.flags = serde_json::json!({ "plan_only": plan_only });
    let (y, x) = inst.base_load();
    let plan = broker::greedy_allocate(&y, &x, &inst.initial_buffers)?;
    out.line(format!("plan cost (base system) = {}", broker::plan_cost(&x, &inst.initial_buffers, &plan)));
    out.file("plan.csv", plan.to_csv());
    if plan_only {
        return Ok(out);
    }
    need_n_list(s)?;
    let actions = a_star_actions(spec)?;
    let v_star = meanfield::iterate_limit(spec, &actions, &spec.initial.measure, &spec.initial.context)?.reward;
    out.line(format!("v* = {v_star}"));
    let policies = [
        ("a-star", Policy::OpenLoop(actions.clone())),
        ("pi-star", broker::pi_star(spec)),
        ("JSQ", broker::baseline_policy(inst, Baseline::Jsq)),
        ("W-JSQ", broker::baseline_policy(inst, Baseline::Wjsq)),
    ];
    let streams = SeedStreams::new(s.seed);
    let mut costs = String::from("policy,N,mean,stderr\n");
    let mut gaps = String::from("policy,N,scaled_gap,stderr\n");
    for &n in &s.n_list {
        let seed = streams.child(n).master();
        for (name, policy) in &policies {
            let est: RewardEstimate = sim::estimate_reward(spec, policy, n, s.replications, seed)?;
            let _ = writeln!(costs, "{name},{n},{},{}", est.mean, est.stderr);
            out.line(format!("N={n} {name:<7} mean={:.6} ci95={:.6}", est.mean, est.ci95_halfwidth));
            if *name == "a-star" || *name == "pi-star" {
                let root = (n as f64).sqrt();
                let _ = writeln!(gaps, "{name},{n},{},{}", root * (est.mean - v_star).abs(), root * est.stderr);
            }
        }
    }
    out.file("costs.csv", costs);
    out.file("clt.csv", gaps);
    let (covs, _) = gamma_and_variance(spec, &actions, s.fd_step)?;
    out.file("gamma_t.csv", clt::gamma_csv(&covs));
    Ok(out)
}
