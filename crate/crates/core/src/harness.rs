//! Experiment driver: expands a config into (target, seed) cells, runs them
//! in a worker pool and writes per-cell series plus an aggregate summary.
//!
//! Output layout under the output directory:
//!
//! - `<cell>.csv`: `slot,throughput,resource,reward,lambda`
//! - `<cell>_dual.csv`: multiplier iterations, when a budget was enforced
//! - `<cell>_curve.csv`: learning curve of the final agent
//! - `<cell>_agent.json`: parameter checkpoint of the final agent
//! - `summary.csv`: mean and sample standard deviation over seeds of the
//!   per-cell slot averages
//!
//! A cell name is `<algorithm>_<e0|lambda>-<value>_s<seed>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Rsd4Agent, TrainReport};
use crate::agent_env::AgentEnv;
use crate::autodiff::Checkpoint;
use crate::baselines::{DpConfig, DpModel, DpSolution};
use crate::config::{AlgorithmKind, ExperimentConfig, ResolvedEnv};
use crate::decomposition::DecomposedEnv;
use crate::dual::{solve_constrained, DpInner, DualConfig, DualRecord, DualState, Evaluation, InnerSolver};
use crate::env::{EnvConfig, SchedEnv};
use crate::error::{Error, Result};
use crate::multihop::{MultihopAllocation, MultihopEnv, TopologyConfig};
use crate::policy::{rollout, DpPolicy, EdfPolicy, Policy, SlotRecord, StaticPolicy, UniformPolicy, ZeroPolicy};

/// Environment variable holding the worker count; unset or 0 uses all cores.
pub const WORKERS_ENV: &str = "RSD4_WORKERS";

/// Added to the cell seed for the environment an agent trains on, so the
/// reported rollout runs on a stream the agent never saw.
const TRAIN_SEED_OFFSET: u64 = 1 << 32;

/// What a cell holds fixed: an average resource budget enforced by the
/// dual loop, or a multiplier.
///
/// On multihop environments a budget value scales every node budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Budget(f64),
    Lambda(f64),
}

impl Target {
    pub fn label(&self) -> &'static str {
        match self {
            Target::Budget(_) => "e0",
            Target::Lambda(_) => "lambda",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Target::Budget(v) | Target::Lambda(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub algorithm: AlgorithmKind,
    pub target: Target,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_{}-{}_s{}", self.algorithm.name(), self.target.label(), self.target.value(), self.seed)
    }
}

/// All cells of a config: budgets first, then multipliers, each over seeds.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let targets = config
        .dual
        .budgets
        .iter()
        .map(|&b| Target::Budget(b))
        .chain(config.dual.lambdas.iter().map(|&l| Target::Lambda(l)));
    targets
        .flat_map(|target| {
            config.run.seeds.iter().map(move |&seed| Cell {
                algorithm: config.algorithm.kind,
                target,
                seed,
            })
        })
        .collect()
}

/// Per-slot record of a rollout together with the multiplier(s) in force.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub records: Vec<SlotRecord>,
    /// Multiplier the rollout ran at (mean over nodes on multihop).
    pub lambda: f64,
    pub dual_csv: Option<String>,
    pub train: Option<TrainReport>,
    pub checkpoint: Option<Checkpoint>,
}

impl CellResult {
    pub fn series_csv(&self) -> String {
        let mut out = String::from("slot,throughput,resource,reward,lambda\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.slot, r.throughput, r.resource, r.reward, self.lambda);
        }
        out
    }

    /// Slot averages `(throughput, resource, reward)`.
    pub fn averages(&self) -> (f64, f64, f64) {
        crate::policy::averages(&self.records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub target: Target,
    pub seeds: usize,
    pub throughput: Stat,
    pub resource: Stat,
    pub reward: Stat,
    pub lambda: Stat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn from_results(results: &[CellResult]) -> Summary {
        let mut rows: Vec<SummaryRow> = Vec::new();
        let mut groups: Vec<(Cell, Vec<&CellResult>)> = Vec::new();
        for r in results {
            match groups.iter_mut().find(|(c, _)| c.algorithm == r.cell.algorithm && c.target == r.cell.target) {
                Some((_, g)) => g.push(r),
                None => groups.push((r.cell, vec![r])),
            }
        }
        for (cell, group) in groups {
            let avgs: Vec<(f64, f64, f64)> = group.iter().map(|r| r.averages()).collect();
            let col = |f: fn(&(f64, f64, f64)) -> f64| Stat::of(&avgs.iter().map(f).collect::<Vec<_>>());
            rows.push(SummaryRow {
                algorithm: cell.algorithm.name().to_string(),
                target: cell.target,
                seeds: group.len(),
                throughput: col(|a| a.0),
                resource: col(|a| a.1),
                reward: col(|a| a.2),
                lambda: Stat::of(&group.iter().map(|r| r.lambda).collect::<Vec<_>>()),
            });
        }
        Summary { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,target,value,seeds,throughput_mean,throughput_std,resource_mean,resource_std,reward_mean,reward_std,lambda_mean,lambda_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.algorithm,
                r.target.label(),
                r.target.value(),
                r.seeds,
                r.throughput.mean,
                r.throughput.std,
                r.resource.mean,
                r.resource.std,
                r.reward.mean,
                r.reward.std,
                r.lambda.mean,
                r.lambda.std
            );
        }
        out
    }
}

/// Worker count from [`WORKERS_ENV`]; `None` means rayon's default.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Config(format!("{WORKERS_ENV}={s:?} is not a non-negative integer"))),
        },
    }
}

/// Runs every cell, writes all files under `out_dir` and returns the
/// summary. Output is identical for identical config and seeds regardless
/// of the worker count.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers_from_env()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let cells = cells(config);
    let results: Vec<Result<CellResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let r = run_cell(config, *cell)?;
                write_cell(&r, out_dir)?;
                Ok(r)
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = Summary::from_results(&results);
    write_file(&out_dir.join("summary.csv"), &summary.to_csv())?;
    Ok(summary)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_cell(r: &CellResult, out_dir: &Path) -> Result<()> {
    let name = r.cell.name();
    let file = |suffix: &str| -> PathBuf { out_dir.join(format!("{name}{suffix}")) };
    write_file(&file(".csv"), &r.series_csv())?;
    if let Some(d) = &r.dual_csv {
        write_file(&file("_dual.csv"), d)?;
    }
    if let Some(t) = &r.train {
        write_file(&file("_curve.csv"), &t.curve_csv())?;
    }
    if let Some(ck) = &r.checkpoint {
        ck.save(&file("_agent.json"))?;
    }
    Ok(())
}

/// Agent settings for `kind`, seeded from the cell.
pub fn agent_config(base: &AgentConfig, kind: AlgorithmKind, seed: u64) -> AgentConfig {
    let cfg = AgentConfig {
        seed: base.seed.wrapping_add(seed),
        ..base.clone()
    };
    match kind {
        AlgorithmKind::Td3 => cfg.td3_like(),
        AlgorithmKind::Sd3 => cfg.sd3_like(),
        _ => cfg,
    }
}

/// Runs one cell without touching the file system.
pub fn run_cell(config: &ExperimentConfig, cell: Cell) -> Result<CellResult> {
    let slots = config.run.slots;
    match config.resolve_environment(cell.seed)? {
        ResolvedEnv::SingleHop { config: env_cfg, decompose } => {
            if cell.algorithm.is_learning() {
                run_learning_single(config, cell, env_cfg, decompose)
            } else {
                run_baseline(config, cell, env_cfg, slots)
            }
        }
        ResolvedEnv::Multihop(topo) => match cell.algorithm {
            AlgorithmKind::Zero => {
                let mut env = MultihopEnv::new(topo)?;
                let lambdas = vec![0.0; env.config().budgets.len()];
                let zero = MultihopAllocation::zeros(env.config());
                env.reset();
                let mut records = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let slot = env.slot();
                    let o = env.step(&zero, &lambdas)?;
                    records.push(SlotRecord {
                        slot,
                        throughput: o.throughput,
                        resource: o.resource_by_node.iter().sum(),
                        reward: o.reward,
                    });
                }
                Ok(plain(cell, records, 0.0))
            }
            k if k.is_learning() => run_learning_multihop(config, cell, topo),
            k => Err(Error::Config(format!("algorithm {} is single-hop only", k.name()))),
        },
    }
}

fn plain(cell: Cell, records: Vec<SlotRecord>, lambda: f64) -> CellResult {
    CellResult {
        cell,
        records,
        lambda,
        dual_csv: None,
        train: None,
        checkpoint: None,
    }
}

/// Builds the environment with the configured hard cap.
fn sched_env(config: &ExperimentConfig, env_cfg: EnvConfig) -> Result<SchedEnv> {
    let mut env = SchedEnv::new(env_cfg)?;
    env.set_hard_cap(config.algorithm.hard_cap);
    Ok(env)
}

fn run_baseline(config: &ExperimentConfig, cell: Cell, env_cfg: EnvConfig, slots: usize) -> Result<CellResult> {
    let mut env = sched_env(config, env_cfg.clone())?;
    let budget = match cell.target {
        Target::Budget(b) => b,
        Target::Lambda(_) => 0.0,
    };
    let mut policy: Box<dyn Policy> = match cell.algorithm {
        AlgorithmKind::Zero => Box::new(ZeroPolicy),
        AlgorithmKind::Edf => Box::new(EdfPolicy {
            budget,
            mode: config.algorithm.edf_mode,
        }),
        AlgorithmKind::Uniform => Box::new(UniformPolicy { budget }),
        AlgorithmKind::Static => Box::new(StaticPolicy { budget }),
        AlgorithmKind::Dp => {
            let (sol, lambda, dual_csv) = dp_for_target(config, &env_cfg, cell.target)?;
            let records = rollout(&mut env, &mut DpPolicy(sol), slots, lambda)?;
            return Ok(CellResult {
                dual_csv,
                ..plain(cell, records, lambda)
            });
        }
        k => return Err(Error::Config(format!("algorithm {} is not a baseline", k.name()))),
    };
    let lambda = match cell.target {
        Target::Lambda(l) => l,
        Target::Budget(_) => 0.0,
    };
    let records = rollout(&mut env, policy.as_mut(), slots, lambda)?;
    Ok(plain(cell, records, lambda))
}

/// DP settings from the config section.
pub fn dp_config(config: &ExperimentConfig) -> DpConfig {
    let d = &config.algorithm.dp;
    DpConfig {
        grid: d.grid.clone(),
        levels: d.levels,
        state_cap: d.state_cap,
        ..DpConfig::default()
    }
}

pub fn dual_config(config: &ExperimentConfig) -> DualConfig {
    let d = &config.dual;
    DualConfig {
        lambda0: d.lambda0,
        alpha0: d.alpha0,
        delta: d.delta,
        max_iterations: d.max_iterations,
        feasibility: d.feasibility,
    }
}

/// Exact solution at a multiplier, or the dual loop's solution at a budget.
pub fn dp_for_target(
    config: &ExperimentConfig,
    env_cfg: &EnvConfig,
    target: Target,
) -> Result<(DpSolution, f64, Option<String>)> {
    let model = DpModel::build(env_cfg, &dp_config(config))?;
    match target {
        Target::Lambda(l) => Ok((model.solve(l)?, l, None)),
        Target::Budget(e0) => {
            let sol = solve_constrained(&mut DpInner { model }, e0, &dual_config(config))?;
            Ok((sol.policy, sol.lambda, Some(sol.state.history_csv())))
        }
    }
}

/// Rolls a trained agent for `slots` slots without exploration. The
/// environment is reset every `episode_len` slots, as in training.
pub fn agent_rollout<E: AgentEnv + ?Sized>(agent: &mut Rsd4Agent, env: &mut E, slots: usize) -> Result<Vec<SlotRecord>> {
    let horizon = agent.config().episode_len.max(1);
    let mut records = Vec::with_capacity(slots);
    let mut episode = 0;
    let mut slot = 0u64;
    while records.len() < slots {
        let mut obs = env.reset();
        let mut st = agent.begin_episode(env.num_agents(), episode);
        for _ in 0..horizon.min(slots - records.len()) {
            let actions = agent.act(&mut st, &obs, false)?;
            let out = env.step(&actions)?;
            records.push(SlotRecord {
                slot,
                throughput: out.throughput,
                resource: out.resources.iter().sum(),
                reward: out.reward,
            });
            obs = out.observations;
            slot += 1;
        }
        episode += 1;
    }
    Ok(records)
}

/// Per-constraint slot averages of an exploration-free agent rollout.
fn measure<E: AgentEnv + ?Sized>(agent: &mut Rsd4Agent, env: &mut E, slots: usize) -> Result<(f64, Vec<f64>)> {
    let horizon = agent.config().episode_len.max(1);
    let mut throughput = 0.0;
    let mut resources = vec![0.0; env.num_constraints()];
    let mut done = 0;
    let mut episode = 0;
    while done < slots.max(1) {
        let mut obs = env.reset();
        let mut st = agent.begin_episode(env.num_agents(), episode);
        for _ in 0..horizon.min(slots.max(1) - done) {
            let actions = agent.act(&mut st, &obs, false)?;
            let out = env.step(&actions)?;
            throughput += out.throughput;
            for (acc, r) in resources.iter_mut().zip(&out.resources) {
                *acc += r;
            }
            obs = out.observations;
            done += 1;
        }
        episode += 1;
    }
    let n = done as f64;
    Ok((throughput / n, resources.into_iter().map(|r| r / n).collect()))
}

/// Trains agents at given multipliers: fresh for every call, or one agent
/// kept across calls with its replay flushed when `warm_start` is set.
struct LearningInner<E> {
    train_env: E,
    eval_env: E,
    agent_config: AgentConfig,
    warm_start: bool,
    eval_slots: usize,
    agent: Option<Rsd4Agent>,
}

impl<E: AgentEnv + Clone> LearningInner<E> {
    fn solve_vector(&mut self, lambdas: &[f64]) -> Result<(Rsd4Agent, TrainReport, f64, Vec<f64>)> {
        self.train_env.set_multipliers(lambdas)?;
        self.eval_env.set_multipliers(lambdas)?;
        let mut agent = match (self.warm_start, self.agent.take()) {
            (true, Some(mut a)) => {
                a.replay_mut().clear();
                a
            }
            _ => Rsd4Agent::for_env(&self.train_env, self.agent_config.clone())?,
        };
        let report = agent.train(&mut self.train_env)?;
        if let Some(msg) = &report.diverged {
            return Err(Error::Diverged(msg.clone()));
        }
        let (throughput, resources) = measure(&mut agent, &mut self.eval_env, self.eval_slots)?;
        if self.warm_start {
            self.agent = Some(agent.clone());
        }
        Ok((agent, report, throughput, resources))
    }
}

impl<E: AgentEnv + Clone> InnerSolver for LearningInner<E> {
    type Policy = (Rsd4Agent, TrainReport);

    fn solve(&mut self, lambda: f64) -> Result<(Self::Policy, Evaluation)> {
        let (agent, report, throughput, resources) = self.solve_vector(&[lambda])?;
        Ok((
            (agent, report),
            Evaluation {
                resource: resources.iter().sum(),
                throughput,
            },
        ))
    }
}

fn run_learning_single(config: &ExperimentConfig, cell: Cell, env_cfg: EnvConfig, decompose: bool) -> Result<CellResult> {
    let train_cfg = EnvConfig {
        seed: env_cfg.seed.wrapping_add(TRAIN_SEED_OFFSET),
        ..env_cfg.clone()
    };
    let train = sched_env(config, train_cfg)?;
    let eval = sched_env(config, env_cfg)?;
    if decompose {
        let (t, e) = (DecomposedEnv::new(train), DecomposedEnv::new(eval));
        run_learning(config, cell, t, e)
    } else {
        run_learning(config, cell, train, eval)
    }
}

fn run_learning<E: AgentEnv + Clone>(config: &ExperimentConfig, cell: Cell, train_env: E, eval_env: E) -> Result<CellResult> {
    let mut inner = LearningInner {
        agent_config: agent_config(&config.algorithm.agent, cell.algorithm, cell.seed),
        warm_start: config.dual.warm_start,
        eval_slots: config.dual.eval_slots,
        agent: None,
        eval_env: eval_env.clone(),
        train_env,
    };
    let ((mut agent, report), lambda, dual_csv) = match cell.target {
        Target::Lambda(l) => (inner.solve(l)?.0, l, None),
        Target::Budget(e0) => {
            let sol = solve_constrained(&mut inner, e0, &dual_config(config))?;
            (sol.policy, sol.lambda, Some(sol.state.history_csv()))
        }
    };
    let mut env = eval_env;
    env.set_multipliers(&[lambda])?;
    let records = agent_rollout(&mut agent, &mut env, config.run.slots)?;
    Ok(CellResult {
        cell,
        records,
        lambda,
        dual_csv,
        checkpoint: Some(agent.to_checkpoint()),
        train: Some(report),
    })
}

/// Multiplier history of a per-node dual loop as CSV:
/// `k,node,lambda,alpha,resource,budget,throughput`.
pub fn node_dual_csv(states: &[DualState], topo: &TopologyConfig, scale: f64) -> String {
    let mut out = String::from("k,node,lambda,alpha,resource,budget,throughput\n");
    let iterations = states.iter().map(|s| s.history.len()).max().unwrap_or(0);
    for k in 0..iterations {
        for (s, b) in states.iter().zip(&topo.budgets) {
            if let Some(DualRecord {
                lambda,
                alpha,
                resource,
                throughput,
                ..
            }) = s.history.get(k)
            {
                let _ = writeln!(out, "{k},{},{lambda},{alpha},{resource},{},{throughput}", b.node, b.budget * scale);
            }
        }
    }
    out
}

fn run_learning_multihop(config: &ExperimentConfig, cell: Cell, topo: TopologyConfig) -> Result<CellResult> {
    let train_topo = TopologyConfig {
        seed: topo.seed.wrapping_add(TRAIN_SEED_OFFSET),
        ..topo.clone()
    };
    let eval_env = MultihopEnv::new(topo.clone())?;
    let mut inner = LearningInner {
        train_env: MultihopEnv::new(train_topo)?,
        eval_env: eval_env.clone(),
        agent_config: agent_config(&config.algorithm.agent, cell.algorithm, cell.seed),
        warm_start: config.dual.warm_start,
        eval_slots: config.dual.eval_slots,
        agent: None,
    };
    let nodes = topo.budgets.len();
    let (agent, report, lambdas, dual_csv) = match cell.target {
        Target::Lambda(l) => {
            let lambdas = vec![l; nodes];
            let (agent, report, _, _) = inner.solve_vector(&lambdas)?;
            (agent, report, lambdas, None)
        }
        Target::Budget(scale) => {
            let (agent, report, lambdas, states) = node_dual(config, &mut inner, &topo, scale)?;
            let csv = node_dual_csv(&states, &topo, scale);
            (agent, report, lambdas, Some(csv))
        }
    };
    let mut agent = agent;
    let mut env = eval_env;
    env.set_multipliers(&lambdas)?;
    let records = agent_rollout(&mut agent, &mut env, config.run.slots)?;
    Ok(CellResult {
        cell,
        records,
        lambda: lambdas.iter().sum::<f64>() / nodes.max(1) as f64,
        dual_csv,
        checkpoint: Some(agent.to_checkpoint()),
        train: Some(report),
    })
}

type NodeDualOutcome = (Rsd4Agent, TrainReport, Vec<f64>, Vec<DualState>);

/// One multiplier per budgeted node, each updated against its own budget.
/// Returns the feasible iterate with the highest throughput, else the last.
fn node_dual(
    config: &ExperimentConfig,
    inner: &mut LearningInner<MultihopEnv>,
    topo: &TopologyConfig,
    scale: f64,
) -> Result<NodeDualOutcome> {
    let d = &config.dual;
    let mut states = topo
        .budgets
        .iter()
        .map(|_| DualState::new(d.lambda0, d.alpha0, d.delta))
        .collect::<Result<Vec<_>>>()?;
    let budgets: Vec<f64> = topo.budgets.iter().map(|b| b.budget * scale).collect();
    let mut best: Option<(NodeDualOutcome, f64)> = None;
    let mut last = None;
    for k in 0..d.max_iterations.max(1) {
        let lambdas: Vec<f64> = states.iter().map(|s| s.lambda).collect();
        let (agent, report, throughput, resources) = inner.solve_vector(&lambdas)?;
        let mut all_done = true;
        for ((s, &e), &b) in states.iter_mut().zip(&resources).zip(&budgets) {
            s.history.push(DualRecord {
                k,
                lambda: s.lambda,
                alpha: s.alpha,
                resource: e,
                throughput,
            });
            all_done &= s.dual_update(e, b)?;
        }
        let feasible = resources
            .iter()
            .zip(&budgets)
            .all(|(e, b)| *e <= b * (1.0 + d.feasibility) + 1e-12);
        let outcome = (agent, report, lambdas, Vec::new());
        if feasible && best.as_ref().is_none_or(|(_, t)| throughput >= *t) {
            best = Some((outcome, throughput));
        } else {
            last = Some(outcome);
        }
        if all_done {
            break;
        }
    }
    let (agent, report, lambdas, _) = best.map(|(o, _)| o).or(last).expect("at least one iteration ran");
    Ok((agent, report, lambdas, states))
}

/// Rolls a checkpointed agent on the config's environment at `lambda`.
pub fn evaluate_checkpoint(
    config: &ExperimentConfig,
    checkpoint: Checkpoint,
    seed: u64,
    lambda: f64,
    slots: usize,
) -> Result<Vec<SlotRecord>> {
    let mut agent = Rsd4Agent::from_checkpoint(checkpoint)?;
    match config.resolve_environment(seed)? {
        ResolvedEnv::SingleHop { config: env_cfg, decompose } => {
            let env = sched_env(config, env_cfg)?;
            if decompose {
                let mut env = DecomposedEnv::new(env);
                env.set_multipliers(&[lambda])?;
                agent_rollout(&mut agent, &mut env, slots)
            } else {
                let mut env = env;
                AgentEnv::set_multipliers(&mut env, &[lambda])?;
                agent_rollout(&mut agent, &mut env, slots)
            }
        }
        ResolvedEnv::Multihop(topo) => {
            let mut env = MultihopEnv::new(topo)?;
            let n = env.num_constraints();
            env.set_multipliers(&vec![lambda; n])?;
            agent_rollout(&mut agent, &mut env, slots)
        }
    }
}

/// Exact solution of the config's single-hop environment at `lambda`.
pub fn dp_oracle(config: &ExperimentConfig, seed: u64, lambda: f64) -> Result<DpSolution> {
    match config.resolve_environment(seed)? {
        ResolvedEnv::SingleHop { config: env_cfg, .. } => DpModel::build(&env_cfg, &dp_config(config))?.solve(lambda),
        ResolvedEnv::Multihop(_) => Err(Error::Config("the exact solver needs a single-hop environment".into())),
    }
}

/// Writes `slot,throughput,resource,reward,lambda` for a record series.
pub fn series_csv(records: &[SlotRecord], lambda: f64) -> String {
    CellResult {
        cell: Cell {
            algorithm: AlgorithmKind::Zero,
            target: Target::Lambda(lambda),
            seed: 0,
        },
        records: records.to_vec(),
        lambda,
        dual_csv: None,
        train: None,
        checkpoint: None,
    }
    .series_csv()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{table1_preset, tiny_preset};

    fn parse_series(text: &str) -> Vec<Vec<f64>> {
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
    }

    #[test]
    fn uniform_with_zero_budget_has_zero_throughput() {
        let mut cfg = table1_preset();
        cfg.algorithm.kind = AlgorithmKind::Uniform;
        cfg.dual.budgets = vec![0.0];
        cfg.run.seeds = vec![0, 1];
        cfg.run.slots = 200;
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].throughput.mean, 0.0);
    }

    #[test]
    fn lambda_sweep_gives_one_cell_per_value_and_seed() {
        let mut cfg = tiny_preset();
        cfg.dual.lambdas = (0..=10).map(|k| f64::from(k) / 10.0).collect();
        cfg.run.seeds = vec![3, 4];
        assert_eq!(cells(&cfg).len(), 22);
        assert_eq!(cells(&cfg).iter().filter(|c| c.seed == 3).count(), 11);
    }

    #[test]
    fn rerun_is_byte_identical_and_summary_recomputes() {
        let mut cfg = table1_preset();
        cfg.run.seeds = vec![0, 1, 2];
        cfg.run.slots = 300;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, a.path()).unwrap();
        run_experiment(&cfg, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 4);
        for n in &names {
            assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap());
        }

        // Recompute the throughput mean and std from the cell files.
        let avgs: Vec<f64> = cfg
            .run
            .seeds
            .iter()
            .map(|s| {
                let text = fs::read_to_string(a.path().join(format!("edf_e0-10_s{s}.csv"))).unwrap();
                let rows = parse_series(&text);
                rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64
            })
            .collect();
        let mean = avgs.iter().sum::<f64>() / 3.0;
        let std = (avgs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
        let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
        assert!((row[4].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((row[5].parse::<f64>().unwrap() - std).abs() < 1e-12);
    }

    #[test]
    fn edf_underspends_where_uniform_does_not() {
        let mut cfg = table1_preset();
        cfg.run.seeds = vec![0];
        cfg.run.slots = 2000;
        let edf = run_cell(&cfg, cells(&cfg)[0]).unwrap();
        cfg.algorithm.kind = AlgorithmKind::Uniform;
        let uni = run_cell(&cfg, cells(&cfg)[0]).unwrap();
        let (_, e_edf, _) = edf.averages();
        let (_, e_uni, _) = uni.averages();
        assert!(e_edf < 10.0 && e_edf < e_uni, "edf spends {e_edf}, uniform {e_uni}");
        assert!((e_uni - 10.0).abs() < 10.0 * 0.05, "uniform spends {e_uni}");
    }

    #[test]
    fn dp_budget_cell_writes_dual_history() {
        let mut cfg = tiny_preset();
        cfg.dual.lambdas.clear();
        cfg.dual.budgets = vec![0.2];
        cfg.run.slots = 100;
        let r = run_cell(&cfg, cells(&cfg)[0]).unwrap();
        let d = r.dual_csv.unwrap();
        assert!(d.starts_with("k,lambda,alpha,resource,throughput\n"));
        assert!(d.lines().count() >= 2);
    }

    #[test]
    fn stat_of_single_value_has_zero_std() {
        assert_eq!(Stat::of(&[2.5]), Stat { mean: 2.5, std: 0.0 });
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }

    fn small_agent() -> AgentConfig {
        AgentConfig {
            episodes: 4,
            episode_len: 8,
            batch_size: 2,
            noise_samples: 2,
            fc_width: 4,
            lstm_width: 4,
            head_width: 4,
            eval_every: 2,
            eval_episodes: 1,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn learning_cell_writes_curve_and_checkpoint() {
        let mut cfg = tiny_preset();
        cfg.algorithm.kind = AlgorithmKind::Rsd4;
        cfg.algorithm.agent = small_agent();
        cfg.run.slots = 20;
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir.path()).unwrap();
        let curve = fs::read_to_string(dir.path().join("rsd4_lambda-0.3_s0_curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 3);
        let ck = Checkpoint::load(&dir.path().join("rsd4_lambda-0.3_s0_agent.json")).unwrap();
        let records = evaluate_checkpoint(&cfg, ck, 0, 0.3, 20).unwrap();
        let series = fs::read_to_string(dir.path().join("rsd4_lambda-0.3_s0.csv")).unwrap();
        assert_eq!(series_csv(&records, 0.3), series);
    }

    #[test]
    fn multihop_budget_cell_runs_one_multiplier_per_node() {
        let mut cfg = crate::presets::multihop_preset();
        cfg.algorithm.agent = small_agent();
        cfg.dual.max_iterations = 2;
        cfg.dual.eval_slots = 16;
        cfg.run.slots = 16;
        let r = run_cell(&cfg, cells(&cfg)[0]).unwrap();
        let dual = r.dual_csv.unwrap();
        assert!(dual.starts_with("k,node,lambda,alpha,resource,budget,throughput\n"));
        assert_eq!(dual.lines().count(), 1 + 2 * 4);
        assert_eq!(r.records.len(), 16);
    }
}
