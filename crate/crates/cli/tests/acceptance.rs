//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use mfmdp::broker::{self, Baseline};
use mfmdp::catalog::{ConstantEnv, PerActionKernel, ScalarReward, SplitReward};
use mfmdp::clt;
use mfmdp::grid::ContextLattice;
use mfmdp::meanfield;
use mfmdp::oracle;
use mfmdp::rng::SeedStreams;
use mfmdp::sim::{self, Policy};
use mfmdp::{Action, ActionSet, Context, InitialState, Kernel, ModelSpec, PopulationMeasure, Sense, StateSpace};
use mfmdp_cli::config;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfmdp-acceptance-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn load(name: &str) -> config::Built {
    config::load(&config_path(name)).unwrap().config.build().unwrap()
}

fn run_cli(args: &[&str]) -> mfmdp_cli::RunOutcome {
    let mut argv = vec!["mfmdp"];
    argv.extend_from_slice(args);
    mfmdp_cli::run(mfmdp_cli::Cli::try_parse_from(argv).unwrap()).unwrap()
}

fn greedy_reproduction() -> Verdict {
    let out = scratch("c1");
    let cfg = config_path("three_queue.json");
    let start = Instant::now();
    run_cli(&["broker-experiment", cfg.to_str().unwrap(), "--plan-only", "--out-dir", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    let csv = std::fs::read_to_string(out.join("plan.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let column = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let want = [
        vec![5.0, 0.0, 0.0, 1.0, 5.0, 1.0, 3.0],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0],
        vec![3.0, 1.0, 0.0, 0.0, 2.0, 3.0, 2.0],
    ];
    let queues_ok = (0..3).all(|i| column(2 + i) == want[i]);
    let leftover = column(5);
    let leftover_ok = leftover == vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0];
    verdict(
        queues_ok && leftover_ok && elapsed < Duration::from_secs(1),
        format!(
            "q1={:?} q2={:?} q3={:?} leftover={} in {:?}",
            column(2),
            column(3),
            column(4),
            leftover.iter().sum::<f64>(),
            elapsed
        ),
    )
}

/// Minimum of `sum_{t=1}^{T} sum_i B_t^i` over every integer routing of the
/// arrivals, by enumeration of all splits with merging of equal buffer
/// states.
fn exhaustive_minimum(arrivals: &[u32], capacity: &[Vec<u32>], buffers: &[u32]) -> u64 {
    fn splits(total: u32, parts: usize) -> Vec<Vec<u32>> {
        if parts == 1 {
            return vec![vec![total]];
        }
        (0..=total)
            .flat_map(|k| {
                splits(total - k, parts - 1).into_iter().map(move |mut rest| {
                    rest.insert(0, k);
                    rest
                })
            })
            .collect()
    }
    fn go(
        t: usize,
        b: Vec<u32>,
        arrivals: &[u32],
        capacity: &[Vec<u32>],
        memo: &mut HashMap<(usize, Vec<u32>), u64>,
    ) -> u64 {
        if t == arrivals.len() {
            return 0;
        }
        if let Some(v) = memo.get(&(t, b.clone())) {
            return *v;
        }
        let mut best = u64::MAX;
        for split in splits(arrivals[t], b.len()) {
            let next: Vec<u32> = (0..b.len())
                .map(|i| (b[i] + split[i]).saturating_sub(capacity[t][i]))
                .collect();
            let cost = next.iter().map(|x| *x as u64).sum::<u64>() + go(t + 1, next, arrivals, capacity, memo);
            best = best.min(cost);
        }
        memo.insert((t, b), best);
        best
    }
    go(0, buffers.to_vec(), arrivals, capacity, &mut HashMap::new())
}

fn greedy_optimality() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    for k in 0..200 {
        let d = rng.gen_range(1..=3);
        let horizon = rng.gen_range(1..=5);
        let arrivals: Vec<u32> = (0..horizon).map(|_| rng.gen_range(0..=8)).collect();
        let capacity: Vec<Vec<u32>> = (0..horizon).map(|_| (0..d).map(|_| rng.gen_range(0..=8)).collect()).collect();
        let buffers: Vec<u32> = (0..d).map(|_| rng.gen_range(0..=8)).collect();
        let f = |v: &[u32]| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
        let cap: Vec<Vec<f64>> = capacity.iter().map(|r| f(r)).collect();
        let plan = broker::greedy_allocate(&f(&arrivals), &cap, &f(&buffers)).unwrap();
        let greedy = broker::plan_cost(&cap, &f(&buffers), &plan);
        let best = exhaustive_minimum(&arrivals, &capacity, &buffers) as f64;
        if (greedy - best).abs() > 1e-9 {
            mismatches.push(format!("#{k}: greedy {greedy} vs {best}"));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches.is_empty() && elapsed < Duration::from_secs(120),
        format!("200 instances, {} mismatches {:?}, {:?}", mismatches.len(), mismatches.first(), elapsed),
    )
}

fn two_state(kernels: Vec<Kernel>, reward: ScalarReward, m0: Vec<f64>, horizon: usize) -> ModelSpec {
    let actions = (0..kernels.len()).map(|a| Action::scalar(a as f64)).collect();
    ModelSpec {
        states: StateSpace::numbered(2).unwrap(),
        actions: ActionSet::Finite(actions),
        context_dim: 0,
        kernel: Arc::new(PerActionKernel(kernels)),
        env: Arc::new(ConstantEnv),
        reward: Arc::new(SplitReward::same(reward)),
        horizon,
        initial: InitialState::from_measure(PopulationMeasure::continuum(m0).unwrap(), Context::empty()),
        sense: Sense::Maximize,
        context_box: None,
        solver: None,
    }
}

fn one_step_covariance() -> Verdict {
    let k = [[0.5, 0.5], [0.2, 0.8]];
    let spec = two_state(
        vec![Kernel::from_rows(k.iter().map(|r| r.to_vec()).collect())],
        ScalarReward::Weight { state: 1 },
        vec![1.0, 0.0],
        1,
    );
    let n = 10_000u64;
    let root = (n as f64).sqrt();
    let mk = [k[0][0], k[0][1]];
    let samples = sim::replicate(&spec, &Policy::OpenLoop(vec![Action::scalar(0.0)]), n, 10_000, 11, |t| {
        let w = t.states[1].measure.weights();
        vec![root * (w[0] - mk[0]), root * (w[1] - mk[1])]
    })
    .unwrap();
    let emp = clt::empirical_covariance(&samples, Some(&[0.0, 0.0]));
    // D = sum_i m_i (diag K_i - K_i^T K_i) with m = (1, 0)
    let d = [[k[0][0] * (1.0 - k[0][0]), -k[0][0] * k[0][1]], [-k[0][0] * k[0][1], k[0][1] * (1.0 - k[0][1])]];
    let traj = meanfield::iterate_limit(&spec, &[Action::scalar(0.0)], &spec.initial.measure, &Context::empty()).unwrap();
    let lib = clt::clt_matrices_at(&spec, &traj, 0, clt::DEFAULT_FD_STEP).unwrap().d;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for i in 0..2 {
        for j in 0..2 {
            pass &= (lib[(i, j)] - d[i][j]).abs() < 1e-12;
            if d[i][j].abs() >= 0.05 {
                let rel = (emp[(i, j)] - d[i][j]).abs() / d[i][j].abs();
                worst = worst.max(rel);
            }
        }
    }
    verdict(pass && worst < 0.05, format!("max relative entry error {:.4} (D11={:.4})", worst, emp[(0, 0)]))
}

fn gamma_recursion() -> Verdict {
    let start = Instant::now();
    let built = load("broker.json");
    let spec = &built.spec;
    let Policy::OpenLoop(actions) = broker::a_star(spec).unwrap() else { unreachable!() };
    let traj = meanfield::iterate_limit(spec, &actions, &spec.initial.measure, &spec.initial.context).unwrap();
    let covs = clt::propagate_covariance(spec, &traj, &clt::initial_covariance(spec), clt::DEFAULT_FD_STEP).unwrap();
    let s = spec.num_states();
    let n = 10_000u64;
    let root = (n as f64).sqrt();
    let horizon = 5;
    let limits: Vec<Vec<f64>> = (0..=horizon).map(|t| traj.measure(t).to_vec()).collect();
    let samples = sim::replicate(spec, &Policy::OpenLoop(actions.clone()), n, 10_000, 5, |tr| {
        (0..=horizon)
            .map(|t| {
                let w = tr.states[t].measure.weights();
                (0..s).map(|i| root * (w[i] - limits[t][i])).collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    })
    .unwrap();
    let mut errors = Vec::new();
    for t in 0..=horizon {
        let at_t: Vec<Vec<f64>> = samples.iter().map(|r| r[t].clone()).collect();
        let emp = clt::empirical_covariance(&at_t, Some(&vec![0.0; s]));
        errors.push(clt::relative_frobenius(&emp, &covs[t].measure_block(s)));
    }
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        worst < 0.10 && elapsed < Duration::from_secs(300),
        format!("relative Frobenius t=0..5 {:.4?}, {:?}", errors, elapsed),
    )
}

fn oracle_gaps_on(spec: &ModelSpec) -> Result<(Vec<f64>, f64), String> {
    let lattice = ContextLattice::new(&[], 1.0).unwrap();
    let v = meanfield::optimize_open_loop(spec, &spec.initial.measure, &spec.initial.context, 1_000_000)
        .map_err(|e| e.to_string())?
        .reward;
    let values = [2u64, 4, 8, 16, 32]
        .iter()
        .map(|&n| {
            oracle::solve_exact(spec, n, &lattice, oracle::DEFAULT_MAX_STATES)
                .map(|t| t.initial_value)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<f64>, String>>()?;
    Ok((values, v))
}

fn check_gaps(values: &[f64], v: f64) -> Result<(), String> {
    let gaps: Vec<f64> = values.iter().map(|x| (x - v).abs()).collect();
    for w in gaps.windows(2) {
        if w[1] > 1.1 * w[0] + 1e-12 {
            return Err(format!("gaps {gaps:?} not monotone"));
        }
    }
    if !(gaps[4] < gaps[0] / 2.0) {
        return Err(format!("gaps {gaps:?} do not halve"));
    }
    Ok(())
}

fn oracle_convergence() -> Verdict {
    let start = Instant::now();
    let shipped = load("toy.json").spec;
    let (values, v) = match oracle_gaps_on(&shipped) {
        Ok(x) => x,
        Err(e) => return verdict(false, e),
    };
    let shipped_ok = check_gaps(&values, v);
    let p = 0.05f64..0.95;
    let family = (p.clone(), p.clone(), p.clone(), p, 0.1f64..0.9);
    let mut runner = TestRunner::new_with_rng(
        PtConfig {
            cases: 32,
            failure_persistence: None,
            ..PtConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let family_result = runner.run(&family, |(a, c, e, g, target)| {
        let k = |p: f64, q: f64| Kernel::from_rows(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]);
        let spec = two_state(
            vec![k(a, c), k(e, g)],
            ScalarReward::Quadratic { state: 0, target, coef: -1.0 },
            vec![0.5, 0.5],
            3,
        );
        let (values, v) = oracle_gaps_on(&spec).map_err(TestCaseError::fail)?;
        check_gaps(&values, v).map_err(TestCaseError::fail)
    });
    let elapsed = start.elapsed();
    let gaps: Vec<String> = values.iter().map(|x| format!("{:.4}", (x - v).abs())).collect();
    verdict(
        shipped_ok.is_ok() && family_result.is_ok() && elapsed < Duration::from_secs(120),
        format!(
            "toy gaps N=2..32 [{}]; 32 random family members {}; {:?}",
            gaps.join(", "),
            match &family_result {
                Ok(()) => "ok".to_string(),
                Err(e) => format!("FAILED: {e}"),
            },
            elapsed
        ),
    )
}

fn broker_limit(built: &config::Built) -> (Vec<Action>, f64) {
    let spec = &built.spec;
    let Policy::OpenLoop(actions) = broker::a_star(spec).unwrap() else { unreachable!() };
    let v = meanfield::iterate_limit(spec, &actions, &spec.initial.measure, &spec.initial.context)
        .unwrap()
        .reward;
    (actions, v)
}

fn clt_scaling() -> Verdict {
    let built = load("broker.json");
    let spec = &built.spec;
    let (actions, v) = broker_limit(&built);
    let ns = [100u64, 1000, 10_000];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, policy) in [("a*", Policy::OpenLoop(actions)), ("Pi*", broker::pi_star(spec))] {
        let series = clt::scaled_gap_series(spec, &policy, v, &ns, 200, 7).unwrap();
        let gaps: Vec<f64> = series.records.iter().map(|r| r.scaled_gap).collect();
        let ok = series.spread() < 3.0 && !series.diverges();
        pass &= ok;
        parts.push(format!("{name} {:.3?} spread {:.2}", gaps, series.spread()));
    }
    verdict(pass, parts.join("; "))
}

fn policy_ranking() -> Verdict {
    let built = load("broker.json");
    let spec = &built.spec;
    let inst = built.broker.as_ref().unwrap();
    let (actions, _) = broker_limit(&built);
    let n = 10_000u64;
    let seed = SeedStreams::new(7).child(n).master();
    let est = |p: &Policy| sim::estimate_reward(spec, p, n, 200, seed).unwrap();
    let a = est(&Policy::OpenLoop(actions));
    let pi = est(&broker::pi_star(spec));
    let jsq = est(&broker::baseline_policy(inst, Baseline::Jsq));
    let wjsq = est(&broker::baseline_policy(inst, Baseline::Wjsq));
    let below = |x: &sim::RewardEstimate, y: &sim::RewardEstimate| x.mean + x.ci95_halfwidth < y.mean - y.ci95_halfwidth;
    verdict(
        below(&a, &jsq) && below(&pi, &wjsq),
        format!(
            "N=1e4: a* {:.4}±{:.4} vs JSQ {:.4}±{:.4}; Pi* {:.4}±{:.4} vs W-JSQ {:.4}±{:.4}",
            a.mean, a.ci95_halfwidth, jsq.mean, jsq.ci95_halfwidth, pi.mean, pi.ci95_halfwidth, wjsq.mean, wjsq.ci95_halfwidth
        ),
    )
}

fn discounted_residual() -> Verdict {
    let start = Instant::now();
    let spec = load("two_state.json").spec;
    let sol = meanfield::value_iteration_discounted(&spec, 0.9, 0.1, 0.1, 1e-9).unwrap();
    let k = [[0.5, 0.5], [0.2, 0.8]];
    let mut m = [1.0, 0.0];
    let mut rollout = 0.0;
    let mut weight = 1.0;
    for _ in 0..200 {
        rollout += weight * m[1];
        weight *= 0.9;
        m = [m[0] * k[0][0] + m[1] * k[1][0], m[0] * k[0][1] + m[1] * k[1][1]];
    }
    let v = sol.value_at(&[1.0, 0.0], &[]);
    let elapsed = start.elapsed();
    verdict(
        sol.bellman_residual <= 1e-8 && (v - rollout).abs() <= 1e-6 && elapsed < Duration::from_secs(10),
        format!(
            "residual {:.2e}, v*(1,0)={v:.9} rollout={rollout:.9}, {:?}",
            sol.bellman_residual, elapsed
        ),
    )
}

fn read_dir(dir: &PathBuf) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn reproducibility() -> Verdict {
    let runs: [(&str, &str, &[&str]); 5] = [
        ("broker-experiment", "broker.json", &["--n-list", "14,28,56", "--replications", "100"]),
        ("simulate", "toy.json", &[]),
        ("clt", "toy.json", &["--replications", "200"]),
        ("oracle", "toy.json", &[]),
        ("meanfield", "two_state.json", &[]),
    ];
    let mut bad = Vec::new();
    let mut shape_ok = false;
    for (i, (cmd, cfg, extra)) in runs.iter().enumerate() {
        let cfg = config_path(cfg);
        let mut outputs = Vec::new();
        for threads in ["1", "4", "1"] {
            let dir = scratch(&format!("c9-{i}-{threads}-{}", outputs.len()));
            let mut args = vec![*cmd, cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap(), "--threads", threads];
            args.extend_from_slice(extra);
            run_cli(&args);
            outputs.push(read_dir(&dir));
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            bad.push(*cmd);
        }
        if *cmd == "broker-experiment" {
            let costs = String::from_utf8(outputs[0].iter().find(|f| f.0 == "costs.csv").unwrap().1.clone()).unwrap();
            shape_ok = costs.lines().count() == 13 && costs.starts_with("policy,N,mean,stderr\n");
        }
    }
    verdict(
        bad.is_empty() && shape_ok,
        format!("5 subcommands x threads 1/4/1, differing: {bad:?}; costs.csv 4x3 rows: {shape_ok}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("greedy reproduction (three-queue plan)", greedy_reproduction),
        ("greedy optimality vs exhaustive search", greedy_optimality),
        ("one-step covariance D", one_step_covariance),
        ("Gamma recursion vs Monte Carlo", gamma_recursion),
        ("exact V*N convergence to v*", oracle_convergence),
        ("sqrt(N) scaling of the reward gap", clt_scaling),
        ("a* and Pi* beat JSQ and W-JSQ", policy_ranking),
        ("discounted value iteration", discounted_residual),
        ("CLI reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("[{}] {}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
