//! Non-learning policies driven slot by slot on a single-hop environment.

use serde::{Deserialize, Serialize};

use crate::baselines::{edf, static_program_with, uniform, ChannelBelief, DpSolution, EdfMode, StaticProblem};
use crate::env::{Allocation, SchedEnv};
use crate::error::Result;

pub trait Policy {
    /// Allocation for the environment's current decision state.
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation>;
}

/// Never allocates.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation> {
        Ok(Allocation::zeros(env.deadlines()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EdfPolicy {
    pub budget: f64,
    pub mode: EdfMode,
}

impl Policy for EdfPolicy {
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation> {
        Ok(edf(env.buffers(), self.budget, env.e_max(), self.mode).allocation)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub budget: f64,
}

impl Policy for UniformPolicy {
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation> {
        Ok(uniform(env.buffers(), self.budget, env.e_max()).allocation)
    }
}

/// Per-slot static program; uses the stationary channel law when channels
/// are masked.
#[derive(Debug, Clone, Copy)]
pub struct StaticPolicy {
    pub budget: f64,
}

impl Policy for StaticPolicy {
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation> {
        if env.buffers().total_jobs() == 0 {
            return Ok(Allocation::zeros(env.deadlines()));
        }
        let levels = env.channel_levels();
        let channels = (0..env.num_users())
            .map(|i| {
                if env.mask().channels {
                    ChannelBelief::known(levels[i])
                } else {
                    ChannelBelief::stationary(env.channel_process(i))
                }
            })
            .collect();
        let problem = StaticProblem {
            buffers: env.buffers().clone(),
            channels,
            weights: env.users().iter().map(|u| u.weight).collect(),
            distances: env.users().iter().map(|u| u.distance).collect(),
            budget: self.budget,
            e_max: env.e_max(),
        };
        Ok(static_program_with(&problem, env.config().service)?.allocation)
    }
}

/// Table lookup in an exact DP solution.
#[derive(Debug, Clone)]
pub struct DpPolicy(pub DpSolution);

impl Policy for DpPolicy {
    fn allocate(&mut self, env: &SchedEnv) -> Result<Allocation> {
        self.0.allocation(env.buffers(), env.channel_states())
    }
}

/// One slot of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub throughput: f64,
    pub resource: f64,
    pub reward: f64,
}

/// Runs `policy` for `slots` slots from a fresh episode at multiplier
/// `lambda`. Hard caps configured on the environment are applied.
pub fn rollout<P: Policy + ?Sized>(env: &mut SchedEnv, policy: &mut P, slots: usize, lambda: f64) -> Result<Vec<SlotRecord>> {
    env.reset();
    let mut out = Vec::with_capacity(slots);
    for _ in 0..slots {
        let slot = env.slot();
        let a = policy.allocate(env)?;
        let a = env.apply_hard_cap(a);
        let o = env.step(&a, lambda)?;
        out.push(SlotRecord {
            slot,
            throughput: o.throughput,
            resource: o.resource,
            reward: o.reward,
        });
    }
    Ok(out)
}

/// Per-slot means of a rollout.
pub fn averages(records: &[SlotRecord]) -> (f64, f64, f64) {
    let n = records.len().max(1) as f64;
    let s = records.iter().fold((0.0, 0.0, 0.0), |acc, r| {
        (acc.0 + r.throughput, acc.1 + r.resource, acc.2 + r.reward)
    });
    (s.0 / n, s.1 / n, s.2 / n)
}
