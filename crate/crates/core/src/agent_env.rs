//! The view of an environment that learning agents drive.
//!
//! An [`AgentEnv`] presents one or more agent slots per environment step: a
//! plain single-hop or multi-hop environment has one, a user-decomposed
//! environment has one per user. All agent slots share the same observation
//! and action widths so one set of networks can serve them.

use crate::baselines::caps::{cap_earliest, cap_scale};
use crate::env::{Allocation, HardCap, SchedEnv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    /// Next observation per agent slot.
    pub observations: Vec<Vec<f64>>,
    /// Reward per agent slot; sums to `reward`.
    pub rewards: Vec<f64>,
    pub reward: f64,
    pub throughput: f64,
    /// Resource spent per constraint (one per multiplier).
    pub resources: Vec<f64>,
}

pub trait AgentEnv {
    fn num_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn e_max(&self) -> f64;

    fn num_constraints(&self) -> usize {
        1
    }

    fn set_multipliers(&mut self, lambdas: &[f64]) -> Result<()>;

    /// Starts a new episode; returns one observation per agent slot.
    fn reset(&mut self) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<AgentStep>;
}

pub(crate) fn scalar_multiplier(lambdas: &[f64]) -> Result<f64> {
    match lambdas {
        [l] if l.is_finite() && *l >= 0.0 => Ok(*l),
        [l] => Err(Error::Domain(format!("multiplier {l} must be finite and >= 0"))),
        _ => Err(Error::Shape(format!("expected one multiplier, got {}", lambdas.len()))),
    }
}

impl SchedEnv {
    pub(crate) fn apply_hard_cap(&self, action: Allocation) -> Allocation {
        match self.hard_cap {
            HardCap::None => action,
            HardCap::Scale { e_max_total } => cap_scale(&action, self.buffers(), e_max_total),
            HardCap::Earliest { e_max_total } => cap_earliest(&action, self.buffers(), e_max_total),
        }
    }
}

impl AgentEnv for SchedEnv {
    fn num_agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        SchedEnv::obs_dim(self)
    }

    fn action_dim(&self) -> usize {
        self.deadlines().iter().map(|d| d + 1).sum()
    }

    fn e_max(&self) -> f64 {
        SchedEnv::e_max(self)
    }

    fn set_multipliers(&mut self, lambdas: &[f64]) -> Result<()> {
        self.lambda = scalar_multiplier(lambdas)?;
        Ok(())
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        vec![SchedEnv::reset(self)]
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<AgentStep> {
        let [flat] = actions else {
            return Err(Error::Shape(format!("expected one action, got {}", actions.len())));
        };
        let action = Allocation::from_flat(self.deadlines(), flat)?;
        let action = self.apply_hard_cap(action);
        let out = SchedEnv::step(self, &action, self.lambda)?;
        Ok(AgentStep {
            observations: vec![out.observation],
            rewards: vec![out.reward],
            reward: out.reward,
            throughput: out.throughput,
            resources: vec![out.resource],
        })
    }
}
