//! Multi-hop scheduling with node-level merging.
//!
//! A flow follows a fixed node path; hop `j` is the link from `path[j]` to
//! `path[j+1]` and is served (and charged) at node `path[j]`. Each hop keeps
//! its own delay-sensitive buffer indexed by the job's end-to-end remaining
//! time. Every transmitting node must carry a [`NodeBudget`]; nodes that only
//! receive are sinks.
//!
//! Within a slot, service at every hop acts on the buffer contents present at
//! slot start. A job that succeeds at hop `j` moves to hop `j+1` with its
//! remaining time unchanged, then all jobs age by one slot together. Jobs
//! therefore advance at most one hop per slot.
//!
//! The merged observation is `[B_f^(1), .., B_f^(h_f) for each flow f, c]`,
//! with flows ordered by starting node (ties by flow index) and channels in
//! the same (flow, hop) order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent_env::{AgentEnv, AgentStep};
use crate::dynamics::{ArrivalProcess, ChannelProcess};
use crate::error::{Error, Result};
use crate::service::ServiceModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSpec {
    pub distance: f64,
    pub channel: ChannelProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Node list from source to destination (at least two nodes).
    pub path: Vec<usize>,
    /// End-to-end deadline in slots.
    pub deadline: usize,
    pub weight: f64,
    pub arrivals: ArrivalProcess,
    /// One entry per hop, `path.len() - 1` in total.
    pub hops: Vec<HopSpec>,
}

impl FlowSpec {
    pub fn num_hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBudget {
    pub node: usize,
    /// Average resource limit `E_0^(k)`.
    pub budget: f64,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultihopMask {
    pub buffers: bool,
    pub channels: bool,
}

impl Default for MultihopMask {
    fn default() -> Self {
        MultihopMask {
            buffers: true,
            channels: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    #[serde(default)]
    pub nodes: Vec<usize>,
    /// Directed links; when empty, any consecutive path pair is accepted.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    pub flows: Vec<FlowSpec>,
    pub budgets: Vec<NodeBudget>,
    pub e_max: f64,
    #[serde(default)]
    pub service: ServiceModel,
    #[serde(default)]
    pub mask: MultihopMask,
    #[serde(default)]
    pub seed: u64,
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_max.is_finite() && self.e_max > 0.0) {
            return Err(Error::Config(format!("e_max {} must be > 0", self.e_max)));
        }
        if !(self.mask.buffers || self.mask.channels) {
            return Err(Error::Config("observation mask hides every component".into()));
        }
        for (k, b) in self.budgets.iter().enumerate() {
            if !(b.budget.is_finite() && b.budget >= 0.0) || !(b.lambda.is_finite() && b.lambda >= 0.0) {
                return Err(Error::Config(format!("node budget {k} needs E_0 >= 0 and λ >= 0")));
            }
            if self.budgets[..k].iter().any(|o| o.node == b.node) {
                return Err(Error::Config(format!("node {} has two budgets", b.node)));
            }
        }
        for (f, flow) in self.flows.iter().enumerate() {
            if flow.path.len() < 2 {
                return Err(Error::Config(format!("flow {f}: path needs at least two nodes")));
            }
            for (a, n) in flow.path.iter().enumerate() {
                if flow.path[..a].contains(n) {
                    return Err(Error::Config(format!("flow {f}: node {n} repeats along the path")));
                }
            }
            if flow.deadline < 1 {
                return Err(Error::Config(format!("flow {f}: deadline must be >= 1")));
            }
            if !(flow.weight.is_finite() && flow.weight >= 0.0) {
                return Err(Error::Config(format!("flow {f}: weight must be >= 0")));
            }
            if flow.hops.len() != flow.num_hops() {
                return Err(Error::Config(format!(
                    "flow {f}: {} hop specs for {} hops",
                    flow.hops.len(),
                    flow.num_hops()
                )));
            }
            for w in flow.path.windows(2) {
                if !self.edges.is_empty() && !self.edges.contains(&(w[0], w[1])) {
                    return Err(Error::Config(format!("flow {f}: no edge {} -> {}", w[0], w[1])));
                }
                if self.node_index(w[0]).is_none() {
                    return Err(Error::Config(format!(
                        "flow {f}: transmitting node {} has no budget",
                        w[0]
                    )));
                }
            }
            flow.arrivals.validate()?;
            for h in &flow.hops {
                if !(h.distance.is_finite() && h.distance > 0.0) {
                    return Err(Error::Config(format!("flow {f}: hop distance must be > 0")));
                }
                h.channel.validate()?;
            }
        }
        Ok(())
    }

    /// Position of `node` in the budget list.
    pub fn node_index(&self, node: usize) -> Option<usize> {
        self.budgets.iter().position(|b| b.node == node)
    }

    /// Flow indices in merged (starting-node) order.
    pub fn merged_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.flows.len()).collect();
        order.sort_by_key(|&f| self.flows[f].path[0]);
        order
    }
}

/// Allocation per flow, hop and remaining-time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultihopAllocation(pub Vec<Vec<Vec<f64>>>);

impl MultihopAllocation {
    pub fn zeros(cfg: &TopologyConfig) -> Self {
        MultihopAllocation(
            cfg.flows
                .iter()
                .map(|f| vec![vec![0.0; f.deadline + 1]; f.num_hops()])
                .collect(),
        )
    }

    /// Rebuilds from a flat vector in merged order.
    pub fn from_flat(cfg: &TopologyConfig, flat: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(cfg);
        let mut at = 0;
        for f in cfg.merged_order() {
            for hop in out.0[f].iter_mut() {
                let w = hop.len();
                let chunk = flat.get(at..at + w).ok_or_else(|| {
                    Error::Shape(format!("flat multihop action of width {} too short", flat.len()))
                })?;
                hop.copy_from_slice(chunk);
                at += w;
            }
        }
        if at != flat.len() {
            return Err(Error::Shape(format!(
                "flat multihop action has {} entries, layout needs {at}",
                flat.len()
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultihopOutcome {
    pub delivered: Vec<u32>,
    pub expired: Vec<u32>,
    /// Resource charged per budgeted node, in budget-list order.
    pub resource_by_node: Vec<f64>,
    pub throughput: f64,
    pub reward: f64,
    pub observation: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultihopEnv {
    cfg: TopologyConfig,
    order: Vec<usize>,
    /// Node-budget index charged by each (flow, hop).
    charge_to: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    slot: u64,
    buffers: Vec<Vec<Vec<u32>>>,
    channel_state: Vec<Vec<usize>>,
    multipliers: Vec<f64>,
}

impl MultihopEnv {
    pub fn new(cfg: TopologyConfig) -> Result<Self> {
        cfg.validate()?;
        let order = cfg.merged_order();
        let charge_to = cfg
            .flows
            .iter()
            .map(|f| {
                f.path[..f.num_hops()]
                    .iter()
                    .map(|&n| cfg.node_index(n).expect("validated"))
                    .collect()
            })
            .collect();
        let buffers = cfg
            .flows
            .iter()
            .map(|f| vec![vec![0; f.deadline + 1]; f.num_hops()])
            .collect();
        let channel_state = cfg.flows.iter().map(|f| vec![0; f.num_hops()]).collect();
        let multipliers = cfg.budgets.iter().map(|b| b.lambda).collect();
        let mut env = MultihopEnv {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            order,
            charge_to,
            slot: 0,
            buffers,
            channel_state,
            multipliers,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.cfg
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Buffer of `flow` at hop `hop` (zero-based).
    pub fn buffer(&self, flow: usize, hop: usize) -> &[u32] {
        &self.buffers[flow][hop]
    }

    pub fn buffer_mut(&mut self, flow: usize, hop: usize) -> &mut [u32] {
        &mut self.buffers[flow][hop]
    }

    pub fn total_jobs(&self) -> u64 {
        self.buffers.iter().flatten().flatten().map(|&n| u64::from(n)).sum()
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.slot = 0;
        for hop in self.buffers.iter_mut().flatten() {
            hop.fill(0);
        }
        self.draw_arrivals();
        for (f, flow) in self.cfg.flows.iter().enumerate() {
            for (j, h) in flow.hops.iter().enumerate() {
                self.channel_state[f][j] = h.channel.initial_state(&mut self.rng);
            }
        }
        self.merged_observe()
    }

    fn draw_arrivals(&mut self) {
        for (f, flow) in self.cfg.flows.iter().enumerate() {
            let a = flow.arrivals.sample(&mut self.rng, self.slot);
            self.buffers[f][0][flow.deadline] += a;
        }
    }

    fn level(&self, f: usize, j: usize) -> f64 {
        self.cfg.flows[f].hops[j].channel.level(self.channel_state[f][j])
    }

    pub fn obs_dim(&self) -> usize {
        let mut w = 0;
        for flow in &self.cfg.flows {
            if self.cfg.mask.buffers {
                w += flow.num_hops() * (flow.deadline + 1);
            }
            if self.cfg.mask.channels {
                w += flow.num_hops();
            }
        }
        w
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.flows.iter().map(|f| f.num_hops() * (f.deadline + 1)).sum()
    }

    /// Node-level merged observation.
    pub fn merged_observe(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim());
        if self.cfg.mask.buffers {
            for &f in &self.order {
                for hop in &self.buffers[f] {
                    out.extend(hop.iter().map(|&n| f64::from(n)));
                }
            }
        }
        if self.cfg.mask.channels {
            for &f in &self.order {
                for j in 0..self.cfg.flows[f].num_hops() {
                    out.push(self.level(f, j));
                }
            }
        }
        out
    }

    fn check_action(&self, action: &MultihopAllocation) -> Result<()> {
        if action.0.len() != self.cfg.flows.len() {
            return Err(Error::Config(format!(
                "allocation covers {} flows, topology has {}",
                action.0.len(),
                self.cfg.flows.len()
            )));
        }
        for (f, (hops, flow)) in action.0.iter().zip(&self.cfg.flows).enumerate() {
            if hops.len() != flow.num_hops() {
                return Err(Error::Config(format!(
                    "flow {f}: allocation names {} hops, path has {}",
                    hops.len(),
                    flow.num_hops()
                )));
            }
            for (j, row) in hops.iter().enumerate() {
                if row.len() != flow.deadline + 1 {
                    return Err(Error::Shape(format!("flow {f} hop {j}: bucket count mismatch")));
                }
                if let Some(e) = row.iter().find(|e| !(e.is_finite() && **e >= 0.0 && **e <= self.cfg.e_max)) {
                    return Err(Error::Constraint(format!(
                        "flow {f} hop {j}: allocation {e} outside [0, {}]",
                        self.cfg.e_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// One slot with per-node multipliers `lambdas` (budget-list order).
    pub fn step(&mut self, action: &MultihopAllocation, lambdas: &[f64]) -> Result<MultihopOutcome> {
        self.check_action(action)?;
        if lambdas.len() != self.cfg.budgets.len() {
            return Err(Error::Shape(format!(
                "{} multipliers for {} nodes",
                lambdas.len(),
                self.cfg.budgets.len()
            )));
        }
        let nf = self.cfg.flows.len();
        let mut delivered = vec![0u32; nf];
        let mut resource_by_node = vec![0.0; self.cfg.budgets.len()];
        let mut moved: Vec<Vec<Vec<u32>>> = self.buffers.iter().map(|f| f.iter().map(|h| vec![0; h.len()]).collect()).collect();

        for f in 0..nf {
            let flow = &self.cfg.flows[f];
            let h = flow.num_hops();
            for j in 0..h {
                let c = self.level(f, j);
                // Summed per hop first so a one-hop topology adds in the
                // same order as the single-hop environment.
                let mut spent = 0.0;
                for tau in 1..=flow.deadline {
                    let jobs = self.buffers[f][j][tau];
                    if jobs == 0 {
                        continue;
                    }
                    let e = action.0[f][j][tau];
                    let p = self.cfg.service.probability(e, c, flow.hops[j].distance)?;
                    let mut ok = 0;
                    for _ in 0..jobs {
                        if self.rng.random::<f64>() < p {
                            ok += 1;
                        }
                    }
                    self.buffers[f][j][tau] -= ok;
                    spent += e * f64::from(jobs);
                    if j + 1 == h {
                        delivered[f] += ok;
                    } else {
                        moved[f][j + 1][tau] += ok;
                    }
                }
                resource_by_node[self.charge_to[f][j]] += spent;
            }
        }

        let mut expired = vec![0u32; nf];
        for f in 0..nf {
            for (hop, mv) in self.buffers[f].iter_mut().zip(&moved[f]) {
                for (b, m) in hop.iter_mut().zip(mv) {
                    *b += m;
                }
                expired[f] += hop[1];
                hop.copy_within(2.., 1);
                let last = hop.len() - 1;
                hop[last] = 0;
                hop[0] = 0;
            }
        }

        let throughput: f64 = delivered
            .iter()
            .zip(&self.cfg.flows)
            .map(|(&d, f)| f.weight * f64::from(d))
            .sum();
        let penalty: f64 = lambdas.iter().zip(&resource_by_node).map(|(l, e)| l * e).sum();
        let reward = throughput - penalty;

        self.slot += 1;
        self.draw_arrivals();
        for f in 0..nf {
            for j in 0..self.cfg.flows[f].num_hops() {
                let cur = self.channel_state[f][j];
                self.channel_state[f][j] = self.cfg.flows[f].hops[j].channel.next_state(&mut self.rng, cur, self.slot);
            }
        }

        Ok(MultihopOutcome {
            delivered,
            expired,
            resource_by_node,
            throughput,
            reward,
            observation: self.merged_observe(),
        })
    }
}

impl AgentEnv for MultihopEnv {
    fn num_agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        MultihopEnv::obs_dim(self)
    }

    fn action_dim(&self) -> usize {
        MultihopEnv::action_dim(self)
    }

    fn e_max(&self) -> f64 {
        self.cfg.e_max
    }

    fn num_constraints(&self) -> usize {
        self.cfg.budgets.len()
    }

    fn set_multipliers(&mut self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.cfg.budgets.len() {
            return Err(Error::Shape(format!(
                "{} multipliers for {} nodes",
                lambdas.len(),
                self.cfg.budgets.len()
            )));
        }
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Domain(format!("multiplier {l} must be finite and >= 0")));
        }
        self.multipliers = lambdas.to_vec();
        Ok(())
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        vec![MultihopEnv::reset(self)]
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<AgentStep> {
        let [flat] = actions else {
            return Err(Error::Shape(format!("expected one action, got {}", actions.len())));
        };
        let action = MultihopAllocation::from_flat(&self.cfg, flat)?;
        let lambdas = self.multipliers.clone();
        let out = MultihopEnv::step(self, &action, &lambdas)?;
        Ok(AgentStep {
            observations: vec![out.observation],
            rewards: vec![out.reward],
            reward: out.reward,
            throughput: out.throughput,
            resources: out.resource_by_node,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(hops: usize, deadline: usize, service: ServiceModel) -> TopologyConfig {
        let path: Vec<usize> = (0..=hops).collect();
        TopologyConfig {
            nodes: path.clone(),
            edges: path.windows(2).map(|w| (w[0], w[1])).collect(),
            flows: vec![FlowSpec {
                path: path.clone(),
                deadline,
                weight: 1.0,
                arrivals: ArrivalProcess::Bernoulli { p: 0.0 },
                hops: (0..hops)
                    .map(|_| HopSpec {
                        distance: 1.0,
                        channel: ChannelProcess::constant(1.0),
                    })
                    .collect(),
            }],
            budgets: (0..hops)
                .map(|n| NodeBudget {
                    node: n,
                    budget: 1.0,
                    lambda: 0.0,
                })
                .collect(),
            e_max: 5.0,
            service,
            mask: MultihopMask::default(),
            seed: 1,
        }
    }

    #[test]
    fn observation_width_two_hops() {
        let env = MultihopEnv::new(line(2, 2, ServiceModel::Logistic)).unwrap();
        let o = env.merged_observe();
        assert_eq!(o.len(), 2 * 3 + 2);
        assert!(o[..6].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn short_deadline_cannot_cross_two_hops() {
        let mut env = MultihopEnv::new(line(2, 1, ServiceModel::Threshold { level: 0.5 })).unwrap();
        env.buffer_mut(0, 0)[1] = 1;
        let cfg = env.config().clone();
        let mut a = MultihopAllocation::zeros(&cfg);
        for hop in a.0[0].iter_mut() {
            hop.fill(5.0);
        }
        let out = env.step(&a, &[0.0, 0.0]).unwrap();
        assert_eq!(out.delivered, vec![0]);
        assert_eq!(out.expired, vec![1]);
        assert_eq!(env.total_jobs(), 0);
    }

    #[test]
    fn deterministic_pipeline_delivers_on_second_slot() {
        let mut env = MultihopEnv::new(line(2, 2, ServiceModel::Threshold { level: 0.5 })).unwrap();
        env.buffer_mut(0, 0)[2] = 1;
        let cfg = env.config().clone();
        let mut a = MultihopAllocation::zeros(&cfg);
        for hop in a.0[0].iter_mut() {
            hop.fill(5.0);
        }
        let first = env.step(&a, &[0.1, 0.2]).unwrap();
        assert_eq!(first.delivered, vec![0]);
        assert_eq!(env.buffer(0, 1), &[0, 1, 0]);
        assert_eq!(first.resource_by_node, vec![5.0, 0.0]);
        let second = env.step(&a, &[0.1, 0.2]).unwrap();
        assert_eq!(second.delivered, vec![1]);
        assert_eq!(second.resource_by_node, vec![0.0, 5.0]);
        assert!((second.reward - (1.0 - 0.2 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_action_costs_nothing() {
        let mut env = MultihopEnv::new(line(3, 3, ServiceModel::Logistic)).unwrap();
        env.buffer_mut(0, 1)[2] = 4;
        let cfg = env.config().clone();
        let out = env.step(&MultihopAllocation::zeros(&cfg), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.delivered, vec![0]);
        assert!(out.resource_by_node.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn allocation_for_missing_hop_is_config_error() {
        let mut env = MultihopEnv::new(line(1, 2, ServiceModel::Logistic)).unwrap();
        let a = MultihopAllocation(vec![vec![vec![0.0; 3]; 2]]);
        assert!(matches!(env.step(&a, &[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn unbudgeted_transmitter_rejected() {
        let mut cfg = line(2, 2, ServiceModel::Logistic);
        cfg.budgets.pop();
        assert!(MultihopEnv::new(cfg).is_err());
    }

    #[test]
    fn repeated_node_rejected() {
        let mut cfg = line(2, 2, ServiceModel::Logistic);
        cfg.edges.clear();
        cfg.flows[0].path = vec![0, 1, 0];
        assert!(MultihopEnv::new(cfg).is_err());
    }
}
