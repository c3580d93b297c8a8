//! Single-hop delay-constrained scheduling environment.
//!
//! Per-slot event order:
//!
//! 1. arrivals of the slot enter each user's queue at remaining time `τ_i`;
//! 2. channel levels of the slot are realized;
//! 3. the scheduler picks an [`Allocation`] (this is where observations are taken);
//! 4. every buffered job in bucket `(i, τ)` succeeds independently with
//!    probability `P(e_i^τ, c_i)`; successes leave and count as served;
//! 5. resource is charged for every scheduled job, successful or not;
//! 6. survivors age by one slot; jobs reaching remaining time 0 expire.
//!
//! Steps 1–2 of the next slot run at the end of [`SchedEnv::step`], so the
//! returned observation is always the pre-decision view of the next slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_hidden_period, apply_switch, ActiveDynamics, ArrivalProcess, ChannelProcess, SwitchSchedule};
use crate::error::{Error, Result};
use crate::service::ServiceModel;

/// Static description of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    /// Slots a job may wait, counting its arrival slot.
    pub deadline: usize,
    pub weight: f64,
    pub distance: f64,
    pub arrivals: ArrivalProcess,
    pub channel: ChannelProcess,
}

impl UserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.deadline < 1 {
            return Err(Error::Config("deadline must be >= 1".into()));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::Config(format!("weight {} must be >= 0", self.weight)));
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(Error::Config(format!("distance {} must be > 0", self.distance)));
        }
        self.arrivals.validate()?;
        self.channel.validate()
    }
}

/// Which parts of the state reach the scheduler, plus hidden factors that
/// never do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservabilityMask {
    pub buffers: bool,
    pub arrivals: bool,
    pub channels: bool,
    /// Service only works in slots that are multiples of this period.
    pub hidden_period: u32,
    pub switches: SwitchSchedule,
}

impl Default for ObservabilityMask {
    fn default() -> Self {
        ObservabilityMask {
            buffers: true,
            arrivals: false,
            channels: true,
            hidden_period: 1,
            switches: SwitchSchedule::default(),
        }
    }
}

impl ObservabilityMask {
    pub fn full() -> Self {
        ObservabilityMask {
            arrivals: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.buffers || self.arrivals || self.channels) {
            return Err(Error::Config("observation mask hides every component".into()));
        }
        if self.hidden_period < 1 {
            return Err(Error::Config("hidden period must be >= 1".into()));
        }
        self.switches.validate()
    }
}

/// Job counts per user, indexed by remaining slots until expiry (`0..=τ_i`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferState(pub Vec<Vec<u32>>);

impl BufferState {
    pub fn empty(deadlines: &[usize]) -> Self {
        BufferState(deadlines.iter().map(|&d| vec![0; d + 1]).collect())
    }

    pub fn user(&self, i: usize) -> &[u32] {
        &self.0[i]
    }

    pub fn num_users(&self) -> usize {
        self.0.len()
    }

    pub fn total_jobs(&self) -> u64 {
        self.0.iter().flatten().map(|&n| u64::from(n)).sum()
    }

    pub fn deadlines(&self) -> Vec<usize> {
        self.0.iter().map(|b| b.len() - 1).collect()
    }
}

/// Resource per job, per user and remaining-time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation(pub Vec<Vec<f64>>);

impl Allocation {
    pub fn zeros(deadlines: &[usize]) -> Self {
        Allocation(deadlines.iter().map(|&d| vec![0.0; d + 1]).collect())
    }

    /// Rebuilds the per-user layout from a flat `[e_1^0.., e_2^0.., ..]` vector.
    pub fn from_flat(deadlines: &[usize], flat: &[f64]) -> Result<Self> {
        let want: usize = deadlines.iter().map(|d| d + 1).sum();
        if flat.len() != want {
            return Err(Error::Shape(format!(
                "flat allocation has {} entries, layout needs {want}",
                flat.len()
            )));
        }
        let mut out = Vec::with_capacity(deadlines.len());
        let mut at = 0;
        for &d in deadlines {
            out.push(flat[at..at + d + 1].to_vec());
            at += d + 1;
        }
        Ok(Allocation(out))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    /// Total expenditure `Σ_i e_i · B_i`.
    pub fn expenditure(&self, buffers: &BufferState) -> f64 {
        self.0
            .iter()
            .zip(&buffers.0)
            .map(|(e, b)| e.iter().zip(b).map(|(e, &n)| e * f64::from(n)).sum::<f64>())
            .sum()
    }

    pub fn check(&self, deadlines: &[usize], e_max: f64) -> Result<()> {
        if self.0.len() != deadlines.len()
            || self.0.iter().zip(deadlines).any(|(e, &d)| e.len() != d + 1)
        {
            return Err(Error::Shape("allocation layout does not match deadlines".into()));
        }
        for (i, row) in self.0.iter().enumerate() {
            for (tau, &e) in row.iter().enumerate() {
                if !e.is_finite() || e < 0.0 {
                    return Err(Error::Constraint(format!("allocation e[{i}][{tau}] = {e} is not >= 0")));
                }
                if e > e_max {
                    return Err(Error::Constraint(format!(
                        "allocation e[{i}][{tau}] = {e} exceeds e_max = {e_max}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Jobs served per user.
    pub served: Vec<u32>,
    /// Jobs served per user and remaining-time bucket (pre-aging index).
    pub served_by_bucket: Vec<Vec<u32>>,
    /// Jobs discarded per user at the end of the slot.
    pub expired: Vec<u32>,
    /// Resource charged per user, `e_i · B_i`.
    pub resource_by_user: Vec<f64>,
    /// Weighted throughput `D = Σ β_i d_i`.
    pub throughput: f64,
    /// Total resource `E`.
    pub resource: f64,
    /// `D − λE`.
    pub reward: f64,
    /// Arrivals that entered at the start of the next slot.
    pub next_arrivals: Vec<u32>,
    pub observation: Vec<f64>,
}

/// Complete environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub users: Vec<UserSpec>,
    pub e_max: f64,
    #[serde(default)]
    pub service: ServiceModel,
    #[serde(default)]
    pub mask: ObservabilityMask,
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_max.is_finite() && self.e_max > 0.0) {
            return Err(Error::Config(format!("e_max {} must be > 0", self.e_max)));
        }
        for u in &self.users {
            u.validate()?;
        }
        self.mask.validate()?;
        for entry in self.mask.switches.entries() {
            if let crate::dynamics::DynamicsChange::ReplaceChannels { channels } = &entry.change {
                if channels.len() != self.users.len() {
                    return Err(Error::Config(format!(
                        "switch at slot {} replaces {} channels for {} users",
                        entry.slot,
                        channels.len(),
                        self.users.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn deadlines(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.deadline).collect()
    }
}

/// Hard per-slot expenditure cap applied to agent actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HardCap {
    #[default]
    None,
    /// Scale the whole allocation down.
    Scale { e_max_total: f64 },
    /// Keep earliest-deadline buckets first.
    Earliest { e_max_total: f64 },
}

#[derive(Debug, Clone)]
pub struct SchedEnv {
    config: EnvConfig,
    deadlines: Vec<usize>,
    rng: ChaCha8Rng,
    slot: u64,
    buffers: BufferState,
    arrivals: Vec<u32>,
    channel_state: Vec<usize>,
    active: ActiveDynamics,
    pub(crate) lambda: f64,
    pub(crate) hard_cap: HardCap,
}

impl SchedEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let deadlines = config.deadlines();
        let n = deadlines.len();
        let mut env = SchedEnv {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            buffers: BufferState::empty(&deadlines),
            arrivals: vec![0; n],
            channel_state: vec![0; n],
            slot: 0,
            active: ActiveDynamics::default(),
            deadlines,
            config,
            lambda: 0.0,
            hard_cap: HardCap::None,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn users(&self) -> &[UserSpec] {
        &self.config.users
    }

    pub fn num_users(&self) -> usize {
        self.deadlines.len()
    }

    pub fn deadlines(&self) -> &[usize] {
        &self.deadlines
    }

    pub fn e_max(&self) -> f64 {
        self.config.e_max
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn buffers(&self) -> &BufferState {
        &self.buffers
    }

    pub fn arrivals(&self) -> &[u32] {
        &self.arrivals
    }

    pub fn mask(&self) -> &ObservabilityMask {
        &self.config.mask
    }

    pub fn set_mask(&mut self, mask: ObservabilityMask) -> Result<()> {
        mask.validate()?;
        self.config.mask = mask;
        Ok(())
    }

    pub fn set_hard_cap(&mut self, cap: HardCap) {
        self.hard_cap = cap;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    /// Channel process currently in force for user `i`.
    pub fn channel_process(&self, i: usize) -> &ChannelProcess {
        active_channel(&self.config, &self.active, i)
    }

    /// Channel state index per user.
    pub fn channel_states(&self) -> &[usize] {
        &self.channel_state
    }

    pub fn channel_levels(&self) -> Vec<f64> {
        (0..self.num_users())
            .map(|i| self.channel_process(i).level(self.channel_state[i]))
            .collect()
    }

    /// Empties the queues and restarts the slot clock at 0. The random
    /// stream continues, so consecutive episodes differ.
    pub fn reset(&mut self) -> Vec<f64> {
        self.slot = 0;
        self.buffers = BufferState::empty(&self.deadlines);
        self.active = apply_switch(0, &self.config.mask.switches);
        self.draw_arrivals();
        for i in 0..self.num_users() {
            self.channel_state[i] = active_channel(&self.config, &self.active, i).initial_state(&mut self.rng);
        }
        self.observe()
    }

    fn draw_arrivals(&mut self) {
        let factor = self.active.arrival_factor;
        for (i, user) in self.config.users.iter().enumerate() {
            let a = match &user.arrivals {
                ArrivalProcess::Trace { .. } => user.arrivals.sample(&mut self.rng, self.slot) * factor,
                p => (0..factor).map(|_| p.sample(&mut self.rng, self.slot)).sum(),
            };
            self.arrivals[i] = a;
            self.buffers.0[i][user.deadline] += a;
        }
    }

    /// Observation under the configured mask.
    pub fn observe(&self) -> Vec<f64> {
        observe(self, &self.config.mask)
    }

    pub fn obs_dim(&self) -> usize {
        observation_width(&self.deadlines, &self.config.mask)
    }

    /// One slot under `action` with multiplier `lambda`.
    pub fn step(&mut self, action: &Allocation, lambda: f64) -> Result<StepOutcome> {
        action.check(&self.deadlines, self.config.e_max)?;
        let n = self.num_users();
        let levels = self.channel_levels();
        let mut served = vec![0u32; n];
        let mut served_by_bucket: Vec<Vec<u32>> = self.deadlines.iter().map(|&d| vec![0; d + 1]).collect();
        let mut resource_by_user = vec![0.0; n];

        for i in 0..n {
            let user = &self.config.users[i];
            for tau in 1..=self.deadlines[i] {
                let jobs = self.buffers.0[i][tau];
                if jobs == 0 {
                    continue;
                }
                let e = action.0[i][tau];
                let base = self.config.service.probability(e, levels[i], user.distance)?;
                let p = apply_hidden_period(self.slot, base, self.config.mask.hidden_period);
                let mut ok = 0;
                for _ in 0..jobs {
                    if self.rng.random::<f64>() < p {
                        ok += 1;
                    }
                }
                self.buffers.0[i][tau] -= ok;
                served[i] += ok;
                served_by_bucket[i][tau] = ok;
                resource_by_user[i] += e * f64::from(jobs);
            }
        }

        let throughput: f64 = served
            .iter()
            .zip(&self.config.users)
            .map(|(&d, u)| u.weight * f64::from(d))
            .sum();
        let resource: f64 = resource_by_user.iter().sum();
        let reward = throughput - lambda * resource;

        let mut expired = vec![0u32; n];
        for (i, q) in self.buffers.0.iter_mut().enumerate() {
            expired[i] = q[1];
            q.copy_within(2.., 1);
            let last = q.len() - 1;
            q[last] = 0;
            q[0] = 0;
        }

        self.slot += 1;
        let prev_entry = self.active.channel_entry;
        self.active = apply_switch(self.slot, &self.config.mask.switches);
        self.draw_arrivals();
        let switched = self.active.channel_entry != prev_entry;
        for i in 0..n {
            self.channel_state[i] = if switched {
                active_channel(&self.config, &self.active, i).initial_state(&mut self.rng)
            } else {
                let cur = self.channel_state[i];
                active_channel(&self.config, &self.active, i).next_state(&mut self.rng, cur, self.slot)
            };
        }

        Ok(StepOutcome {
            served,
            served_by_bucket,
            expired,
            resource_by_user,
            throughput,
            resource,
            reward,
            next_arrivals: self.arrivals.clone(),
            observation: self.observe(),
        })
    }
}

/// Observation of `env` under `mask`: `[buffers.., arrivals.., channels..]`,
/// each section ordered by user. Hidden factors never appear.
fn active_channel<'a>(config: &'a EnvConfig, active: &ActiveDynamics, i: usize) -> &'a ChannelProcess {
    match active.channel_entry.and_then(|e| config.mask.switches.channels_of(e)) {
        Some(chs) => &chs[i],
        None => &config.users[i].channel,
    }
}

pub fn observe(env: &SchedEnv, mask: &ObservabilityMask) -> Vec<f64> {
    let mut out = Vec::with_capacity(observation_width(env.deadlines(), mask));
    if mask.buffers {
        out.extend(env.buffers.0.iter().flatten().map(|&n| f64::from(n)));
    }
    if mask.arrivals {
        out.extend(env.arrivals.iter().map(|&a| f64::from(a)));
    }
    if mask.channels {
        out.extend(env.channel_levels());
    }
    out
}

pub fn observation_width(deadlines: &[usize], mask: &ObservabilityMask) -> usize {
    let n = deadlines.len();
    let mut w = 0;
    if mask.buffers {
        w += deadlines.iter().map(|d| d + 1).sum::<usize>();
    }
    if mask.arrivals {
        w += n;
    }
    if mask.channels {
        w += n;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_user(deadline: usize, arrivals: ArrivalProcess) -> EnvConfig {
        EnvConfig {
            users: vec![UserSpec {
                deadline,
                weight: 1.0,
                distance: 1.0,
                arrivals,
                channel: ChannelProcess::constant(1.0),
            }],
            e_max: 10.0,
            service: ServiceModel::Logistic,
            mask: ObservabilityMask::default(),
            seed: 11,
        }
    }

    fn no_arrivals() -> ArrivalProcess {
        ArrivalProcess::Bernoulli { p: 0.0 }
    }

    #[test]
    fn zero_action_only_ages_jobs() {
        let mut env = SchedEnv::new(one_user(3, no_arrivals())).unwrap();
        env.buffers.0[0][3] = 2;
        let out = env.step(&Allocation::zeros(&[3]), 0.5).unwrap();
        assert_eq!(out.served, vec![0]);
        assert_eq!(out.resource, 0.0);
        assert_eq!(env.buffers().user(0), &[0, 0, 2, 0]);
    }

    #[test]
    fn last_slot_job_expires() {
        let mut env = SchedEnv::new(one_user(3, no_arrivals())).unwrap();
        env.buffers.0[0][1] = 1;
        let out = env.step(&Allocation::zeros(&[3]), 0.0).unwrap();
        assert_eq!(out.expired, vec![1]);
        assert_eq!(env.buffers().total_jobs(), 0);
    }

    #[test]
    fn service_fraction_matches_closed_form() {
        let mut env = SchedEnv::new(one_user(2, no_arrivals())).unwrap();
        let k = 4u32;
        let reps = 100_000 / k as usize;
        let mut action = Allocation::zeros(&[2]);
        action.0[0][2] = 1.0;
        let mut served = 0u64;
        for _ in 0..reps {
            env.buffers.0[0] = vec![0, 0, k];
            served += u64::from(env.step(&action, 0.0).unwrap().served[0]);
        }
        let n = f64::from(k) * reps as f64;
        let p = 1.0f64.tanh();
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((served as f64 / n - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn resource_charged_for_failures_too() {
        let mut cfg = one_user(2, no_arrivals());
        cfg.service = ServiceModel::Threshold { level: 5.0 };
        let mut env = SchedEnv::new(cfg).unwrap();
        env.buffers.0[0][2] = 3;
        let mut action = Allocation::zeros(&[2]);
        action.0[0][2] = 1.5;
        let out = env.step(&action, 2.0).unwrap();
        assert_eq!(out.served, vec![0]);
        assert!((out.resource - 4.5).abs() < 1e-12);
        assert_eq!(out.reward, out.throughput - 2.0 * out.resource);
    }

    #[test]
    fn rejects_over_cap_allocation() {
        let mut env = SchedEnv::new(one_user(2, no_arrivals())).unwrap();
        let mut action = Allocation::zeros(&[2]);
        action.0[0][1] = 10.5;
        assert!(matches!(env.step(&action, 0.0), Err(Error::Constraint(_))));
        action.0[0][1] = -0.1;
        assert!(matches!(env.step(&action, 0.0), Err(Error::Constraint(_))));
    }

    #[test]
    fn unit_deadline_jobs_can_be_served_on_arrival() {
        let mut cfg = one_user(1, ArrivalProcess::Bernoulli { p: 1.0 });
        cfg.service = ServiceModel::Threshold { level: 1.0 };
        let mut env = SchedEnv::new(cfg).unwrap();
        assert_eq!(env.buffers().user(0), &[0, 1]);
        let mut action = Allocation::zeros(&[1]);
        action.0[0][1] = 1.0;
        let out = env.step(&action, 0.0).unwrap();
        assert_eq!(out.served, vec![1]);
        assert_eq!(out.expired, vec![0]);
    }

    #[test]
    fn observation_layout() {
        let mut cfg = one_user(2, no_arrivals());
        cfg.mask = ObservabilityMask::full();
        let env = SchedEnv::new(cfg).unwrap();
        assert_eq!(env.observe().len(), 3 + 1 + 1);
        assert_eq!(env.obs_dim(), 5);
    }

    #[test]
    fn hidden_period_blocks_service_off_period() {
        let mut cfg = one_user(3, no_arrivals());
        cfg.service = ServiceModel::Threshold { level: 1.0 };
        cfg.mask.hidden_period = 2;
        let mut env = SchedEnv::new(cfg).unwrap();
        let mut action = Allocation::zeros(&[3]);
        action.0[0] = vec![0.0, 1.0, 1.0, 1.0];
        env.buffers.0[0][3] = 1;
        // Slot 0 is a multiple of the period.
        assert_eq!(env.step(&action, 0.0).unwrap().served, vec![1]);
        env.buffers.0[0][3] = 1;
        let out = env.step(&action, 0.0).unwrap();
        assert_eq!(out.served, vec![0]);
        assert_eq!(out.resource, 1.0);
    }

    #[test]
    fn mask_must_show_something() {
        let mut cfg = one_user(2, no_arrivals());
        cfg.mask.buffers = false;
        cfg.mask.channels = false;
        assert!(SchedEnv::new(cfg).is_err());
    }
}
