//! Exact average-reward dynamic programming on tiny, fully observed,
//! action-discretized instances.
//!
//! The state is the buffer (buckets `1..=τ_i` of every user) together with
//! each user's channel index; arrivals must have bounded i.i.d. support and
//! channels must be finite Markov chains. Actions choose one grid level per
//! nonempty bucket. The model stores per-(state, action) expected throughput,
//! expected resource and the sparse next-state law, so one build serves any
//! number of multipliers.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::dynamics::ChannelProcess;
use crate::env::{Allocation, BufferState, EnvConfig};
use crate::error::{Error, Result};
use crate::service::ServiceModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    /// Allocation levels; `None` means `levels` evenly spaced points in
    /// `[0, e_max]`.
    pub grid: Option<Vec<f64>>,
    pub levels: usize,
    pub state_cap: u64,
    /// Cap on the number of (state, action) pairs.
    pub pair_cap: u64,
    /// Stop when the span of successive bias differences drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            grid: None,
            levels: 5,
            state_cap: 50_000,
            pair_cap: 2_000_000,
            tolerance: 1e-9,
            max_iterations: 1_000_000,
        }
    }
}

impl DpConfig {
    pub fn with_grid(grid: Vec<f64>) -> Self {
        DpConfig {
            grid: Some(grid),
            ..Self::default()
        }
    }

    fn resolve_grid(&self, e_max: f64) -> Result<Vec<f64>> {
        let grid = match &self.grid {
            Some(g) => g.clone(),
            None if self.levels >= 2 => (0..self.levels)
                .map(|k| e_max * k as f64 / (self.levels - 1) as f64)
                .collect(),
            None => return Err(Error::Config("action grid needs at least two levels".into())),
        };
        if grid.is_empty() || grid.iter().any(|&e| !(0.0..=e_max).contains(&e)) {
            return Err(Error::Config(format!("action grid must lie in [0, {e_max}]")));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone)]
struct UserModel {
    deadline: usize,
    weight: f64,
    distance: f64,
    /// Base for each bucket digit.
    radix: usize,
    arrivals: Vec<f64>,
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl UserModel {
    fn num_states(&self) -> usize {
        self.radix.pow(self.deadline as u32) * self.levels.len()
    }

    /// `(buckets 1..=τ, channel)` from a user-local index.
    fn decode(&self, mut idx: usize) -> (Vec<u32>, usize) {
        let channel = idx % self.levels.len();
        idx /= self.levels.len();
        let mut buckets = vec![0u32; self.deadline];
        for b in buckets.iter_mut().rev() {
            *b = (idx % self.radix) as u32;
            idx /= self.radix;
        }
        (buckets, channel)
    }

    fn encode(&self, buckets: &[u32], channel: usize) -> usize {
        let mut idx = 0;
        for &b in buckets {
            idx = idx * self.radix + b as usize;
        }
        idx * self.levels.len() + channel
    }
}

#[derive(Debug, Clone)]
struct ActionEntry {
    /// Grid index per nonempty (user, bucket), in user-then-bucket order.
    choice: Vec<u8>,
    throughput: f64,
    resource: f64,
    next: Vec<(u32, f64)>,
}

/// Finite MDP of a tiny single-hop instance.
#[derive(Debug, Clone)]
pub struct DpModel {
    users: Vec<UserModel>,
    strides: Vec<usize>,
    grid: Vec<f64>,
    num_states: usize,
    actions: Vec<Vec<ActionEntry>>,
    tolerance: f64,
    max_iterations: usize,
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + 1];
    let mut coef = 1.0;
    for (k, slot) in out.iter_mut().enumerate() {
        if k > 0 {
            coef *= f64::from(n - k as u32 + 1) / k as f64;
        }
        *slot = coef * p.powi(k as i32) * (1.0 - p).powi((n - k as u32) as i32);
    }
    out
}

impl DpModel {
    pub fn build(env: &EnvConfig, dp: &DpConfig) -> Result<Arc<Self>> {
        env.validate()?;
        if env.mask.hidden_period != 1 || !env.mask.switches.is_empty() {
            return Err(Error::Config(
                "DP oracle needs stationary dynamics (no hidden period or switches)".into(),
            ));
        }
        let grid = dp.resolve_grid(env.e_max)?;
        if grid.len() > usize::from(u8::MAX) {
            return Err(Error::Config("action grid too fine for the DP oracle".into()));
        }
        let mut users = Vec::with_capacity(env.users.len());
        for (i, u) in env.users.iter().enumerate() {
            let arrivals = u.arrivals.pmf().ok_or_else(|| {
                Error::Config(format!("user {i}: DP needs bounded i.i.d. arrivals"))
            })?;
            let ChannelProcess::Markov {
                levels,
                transition,
                initial,
            } = &u.channel
            else {
                return Err(Error::Config(format!("user {i}: DP needs a Markov channel")));
            };
            users.push(UserModel {
                deadline: u.deadline,
                weight: u.weight,
                distance: u.distance,
                radix: arrivals.len(),
                arrivals,
                levels: levels.clone(),
                transition: transition.clone(),
                initial: initial.clone(),
            });
        }

        let mut count: u64 = 1;
        for u in &users {
            count = count.saturating_mul(u.num_states() as u64);
        }
        if count > dp.state_cap {
            return Err(Error::StateCap {
                count,
                cap: dp.state_cap,
            });
        }
        let num_states = count as usize;
        let mut strides = vec![1usize; users.len()];
        for i in (0..users.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * users[i + 1].num_states();
        }

        let mut model = DpModel {
            users,
            strides,
            grid,
            num_states,
            actions: Vec::with_capacity(num_states),
            tolerance: dp.tolerance,
            max_iterations: dp.max_iterations,
        };

        let mut pairs: u64 = 0;
        for s in 0..num_states {
            let local = model.split(s);
            let nonempty: usize = local
                .iter()
                .zip(&model.users)
                .map(|(&l, u)| u.decode(l).0.iter().filter(|&&b| b > 0).count())
                .sum();
            pairs = pairs.saturating_add((model.grid.len() as u64).saturating_pow(nonempty as u32));
            if pairs > dp.pair_cap {
                return Err(Error::StateCap {
                    count: pairs,
                    cap: dp.pair_cap,
                });
            }
        }

        for s in 0..num_states {
            let entries = model.enumerate_actions(s, env.service)?;
            model.actions.push(entries);
        }
        Ok(Arc::new(model))
    }

    fn split(&self, s: usize) -> Vec<usize> {
        self.users
            .iter()
            .zip(&self.strides)
            .map(|(u, &st)| (s / st) % u.num_states())
            .collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.actions[s].len()
    }

    /// Buffers (with the unused `τ = 0` slot) and channel indices of state `s`.
    pub fn decode_state(&self, s: usize) -> (BufferState, Vec<usize>) {
        let mut buffers = Vec::with_capacity(self.users.len());
        let mut channels = Vec::with_capacity(self.users.len());
        for (u, l) in self.users.iter().zip(self.split(s)) {
            let (b, c) = u.decode(l);
            let mut row = vec![0u32];
            row.extend(b);
            buffers.push(row);
            channels.push(c);
        }
        (BufferState(buffers), channels)
    }

    pub fn state_index(&self, buffers: &BufferState, channels: &[usize]) -> Option<usize> {
        if buffers.num_users() != self.users.len() || channels.len() != self.users.len() {
            return None;
        }
        let mut s = 0;
        for (i, u) in self.users.iter().enumerate() {
            let b = &buffers.0[i];
            if b.len() != u.deadline + 1 || b[1..].iter().any(|&x| x as usize >= u.radix) || channels[i] >= u.levels.len() {
                return None;
            }
            s += u.encode(&b[1..], channels[i]) * self.strides[i];
        }
        Some(s)
    }

    fn enumerate_actions(&self, s: usize, service: ServiceModel) -> Result<Vec<ActionEntry>> {
        let local = self.split(s);
        let decoded: Vec<(Vec<u32>, usize)> = self.users.iter().zip(&local).map(|(u, &l)| u.decode(l)).collect();
        let slots: Vec<(usize, usize)> = decoded
            .iter()
            .enumerate()
            .flat_map(|(i, (b, _))| b.iter().enumerate().filter(|(_, &n)| n > 0).map(move |(t, _)| (i, t)))
            .collect();
        let g = self.grid.len();
        let total = g.pow(slots.len() as u32);
        let mut out = Vec::with_capacity(total);
        for code in 0..total {
            let mut choice = vec![0u8; slots.len()];
            let mut c = code;
            for k in (0..slots.len()).rev() {
                choice[k] = (c % g) as u8;
                c /= g;
            }
            let mut levels_per_user: Vec<Vec<f64>> = decoded.iter().map(|(b, _)| vec![0.0; b.len()]).collect();
            for (&(i, t), &k) in slots.iter().zip(&choice) {
                levels_per_user[i][t] = self.grid[k as usize];
            }
            let mut throughput = 0.0;
            let mut resource = 0.0;
            let mut joint: Vec<(usize, f64)> = vec![(0, 1.0)];
            for (i, u) in self.users.iter().enumerate() {
                let (buckets, ch) = &decoded[i];
                let (dist, thr, res) = self.user_transition(u, buckets, *ch, &levels_per_user[i], service)?;
                throughput += thr;
                resource += res;
                let mut next = Vec::with_capacity(joint.len() * dist.len());
                for &(js, jp) in &joint {
                    for &(us, up) in &dist {
                        next.push((js + us * self.strides[i], jp * up));
                    }
                }
                joint = next;
            }
            joint.sort_unstable_by_key(|&(s, _)| s);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(joint.len());
            for (s, p) in joint {
                if p == 0.0 {
                    continue;
                }
                match merged.last_mut() {
                    Some((ls, lp)) if *ls as usize == s => *lp += p,
                    _ => merged.push((s as u32, p)),
                }
            }
            out.push(ActionEntry {
                choice,
                throughput,
                resource,
                next: merged,
            });
        }
        Ok(out)
    }

    /// Next user-local state law, expected weighted service and resource.
    fn user_transition(
        &self,
        u: &UserModel,
        buckets: &[u32],
        channel: usize,
        alloc: &[f64],
        service: ServiceModel,
    ) -> Result<(Vec<(usize, f64)>, f64, f64)> {
        let level = u.levels[channel];
        let tau = u.deadline;
        let mut thr = 0.0;
        let mut res = 0.0;
        // Partial next-buffer digits (index 0 = new bucket 1) with probability.
        let mut partial: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(tau), 1.0)];
        for t in 0..tau {
            let n = buckets[t];
            let p = if n > 0 {
                service.probability(alloc[t], level, u.distance)?
            } else {
                0.0
            };
            thr += u.weight * f64::from(n) * p;
            res += alloc[t] * f64::from(n);
            if t == 0 {
                // Survivors of bucket 1 expire.
                continue;
            }
            let surv = binomial_pmf(n, 1.0 - p);
            let mut next = Vec::with_capacity(partial.len() * surv.len());
            for (digits, pr) in &partial {
                for (k, &q) in surv.iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    let mut d = digits.clone();
                    d.push(k as u32);
                    next.push((d, pr * q));
                }
            }
            partial = next;
        }
        let mut dist = Vec::new();
        for (digits, pr) in &partial {
            for (a, &pa) in u.arrivals.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let mut d = digits.clone();
                d.push(a as u32);
                for (c2, &pc) in u.transition[channel].iter().enumerate() {
                    if pc == 0.0 {
                        continue;
                    }
                    dist.push((u.encode(&d, c2), pr * pa * pc));
                }
            }
        }
        Ok((dist, thr, res))
    }

    /// Law of the first decision state after a reset.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_states];
        let mut joint: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (i, u) in self.users.iter().enumerate() {
            let mut next = Vec::new();
            for (a, &pa) in u.arrivals.iter().enumerate() {
                for (c, &pc) in u.initial.iter().enumerate() {
                    if pa * pc == 0.0 {
                        continue;
                    }
                    let mut digits = vec![0u32; u.deadline];
                    digits[u.deadline - 1] = a as u32;
                    let l = u.encode(&digits, c);
                    for &(js, jp) in &joint {
                        next.push((js + l * self.strides[i], jp * pa * pc));
                    }
                }
            }
            joint = next;
        }
        for (s, p) in joint {
            d[s] += p;
        }
        d
    }

    /// Relative value iteration for the multiplier `lambda`.
    pub fn solve(self: &Arc<Self>, lambda: f64) -> Result<DpSolution> {
        // Aperiodicity transform: h ← (1−κ)h + κ·T h keeps the optimal
        // policies and scales the gain by κ.
        const KAPPA: f64 = 0.5;
        let n = self.num_states;
        let mut h = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut gain = 0.0;
        let mut iterations = 0;
        let mut span = f64::INFINITY;
        while iterations < self.max_iterations {
            iterations += 1;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in 0..n {
                let best = self.actions[s]
                    .iter()
                    .map(|a| a.throughput - lambda * a.resource + a.next.iter().map(|&(t, p)| p * h[t as usize]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                next[s] = (1.0 - KAPPA) * h[s] + KAPPA * best;
                let diff = next[s] - h[s];
                lo = lo.min(diff);
                hi = hi.max(diff);
            }
            span = hi - lo;
            gain = 0.5 * (hi + lo) / KAPPA;
            let offset = next[0];
            for (hs, ns) in h.iter_mut().zip(&next) {
                *hs = ns - offset;
            }
            if span < self.tolerance {
                break;
            }
        }
        if !gain.is_finite() {
            return Err(Error::NonFinite("DP gain".into()));
        }
        let policy = (0..n)
            .map(|s| {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (k, a) in self.actions[s].iter().enumerate() {
                    let v = a.throughput - lambda * a.resource + a.next.iter().map(|&(t, p)| p * h[t as usize]).sum::<f64>();
                    // Prefer the cheaper (lower-index) action on numerical ties.
                    if v > best_val + 1e-12 {
                        best = k;
                        best_val = v;
                    }
                }
                best
            })
            .collect();
        Ok(DpSolution {
            model: Arc::clone(self),
            lambda,
            gain,
            bias: h,
            policy,
            iterations,
            span,
        })
    }
}

/// Optimal average Lagrangian reward and a greedy policy table.
#[derive(Debug, Clone)]
pub struct DpSolution {
    model: Arc<DpModel>,
    pub lambda: f64,
    /// Optimal average reward `D − λE` per slot.
    pub gain: f64,
    /// Relative values, zero at state 0.
    pub bias: Vec<f64>,
    /// Chosen action index per state.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub span: f64,
}

/// Long-run averages of a stationary policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMetrics {
    pub throughput: f64,
    pub resource: f64,
}

impl DpSolution {
    pub fn model(&self) -> &Arc<DpModel> {
        &self.model
    }

    pub fn allocation_for_state(&self, s: usize) -> Allocation {
        let (buffers, _) = self.model.decode_state(s);
        let entry = &self.model.actions[s][self.policy[s]];
        let mut alloc = Allocation::zeros(&buffers.deadlines());
        let mut k = 0;
        for (i, row) in buffers.0.iter().enumerate() {
            for t in 1..row.len() {
                if row[t] > 0 {
                    alloc.0[i][t] = self.model.grid[entry.choice[k] as usize];
                    k += 1;
                }
            }
        }
        alloc
    }

    /// Policy lookup for a live environment state.
    pub fn allocation(&self, buffers: &BufferState, channels: &[usize]) -> Result<Allocation> {
        let s = self
            .model
            .state_index(buffers, channels)
            .ok_or_else(|| Error::Domain("state outside the DP model".into()))?;
        Ok(self.allocation_for_state(s))
    }

    /// Exact long-run throughput and resource of the greedy policy, started
    /// from the reset distribution.
    pub fn stationary_metrics(&self) -> PolicyMetrics {
        let m = &self.model;
        let mut d = m.initial_distribution();
        let mut next = vec![0.0; m.num_states];
        for _ in 0..1_000_000 {
            next.iter_mut().zip(&d).for_each(|(x, y)| *x = 0.5 * y);
            for (s, &ds) in d.iter().enumerate() {
                if ds == 0.0 {
                    continue;
                }
                for &(t, p) in &m.actions[s][self.policy[s]].next {
                    next[t as usize] += 0.5 * ds * p;
                }
            }
            let diff: f64 = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut d, &mut next);
            if diff < 1e-14 {
                break;
            }
        }
        let mut throughput = 0.0;
        let mut resource = 0.0;
        for (s, &ds) in d.iter().enumerate() {
            let a = &m.actions[s][self.policy[s]];
            throughput += ds * a.throughput;
            resource += ds * a.resource;
        }
        PolicyMetrics { throughput, resource }
    }

    /// Policy table and relative values as CSV:
    /// `state,buffers,channels,allocation,bias`, with vectors `;`-joined
    /// user by user and `|` between users.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,buffers,channels,allocation,bias\n");
        let join = |rows: &[Vec<String>]| rows.iter().map(|r| r.join(";")).collect::<Vec<_>>().join("|");
        for s in 0..self.model.num_states {
            let (b, c) = self.model.decode_state(s);
            let a = self.allocation_for_state(s);
            let b: Vec<Vec<String>> = b.0.iter().map(|r| r[1..].iter().map(|x| x.to_string()).collect()).collect();
            let a: Vec<Vec<String>> = a.0.iter().map(|r| r[1..].iter().map(|x| x.to_string()).collect()).collect();
            let c: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{s},{},{},{},{}", join(&b), c.join(";"), join(&a), self.bias[s]);
        }
        out
    }
}

/// Builds the model for `env` and solves it at `lambda`.
pub fn dp_optimal(env: &EnvConfig, dp: &DpConfig, lambda: f64) -> Result<DpSolution> {
    DpModel::build(env, dp)?.solve(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ArrivalProcess;
    use crate::env::{ObservabilityMask, UserSpec};

    fn deterministic() -> EnvConfig {
        EnvConfig {
            users: vec![UserSpec {
                deadline: 1,
                weight: 1.0,
                distance: 1.0,
                arrivals: ArrivalProcess::Bernoulli { p: 1.0 },
                channel: ChannelProcess::constant(1.0),
            }],
            e_max: 1.0,
            service: ServiceModel::Threshold { level: 1.0 },
            mask: ObservabilityMask::default(),
            seed: 0,
        }
    }

    #[test]
    fn deterministic_instance_by_hand() {
        let sol = dp_optimal(&deterministic(), &DpConfig::with_grid(vec![0.0, 1.0]), 0.3).unwrap();
        assert!((sol.gain - 0.7).abs() < 1e-9);
        let (b, _) = sol.model().decode_state(0);
        let s = sol.model().state_index(&BufferState(vec![vec![0, 1]]), &[0]).unwrap();
        assert_eq!(b.num_users(), 1);
        assert_eq!(sol.allocation_for_state(s).0[0][1], 1.0);
        let m = sol.stationary_metrics();
        assert!((m.throughput - 1.0).abs() < 1e-12);
        assert!((m.resource - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expensive_resource_means_idle() {
        let sol = dp_optimal(&deterministic(), &DpConfig::with_grid(vec![0.0, 1.0]), 1.5).unwrap();
        assert!(sol.gain.abs() < 1e-9);
        for s in 0..sol.model().num_states() {
            assert!(sol.allocation_for_state(s).flatten().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn state_cap_refuses() {
        let mut env = deterministic();
        env.users[0].deadline = 6;
        env.users[0].arrivals = ArrivalProcess::Binomial { trials: 9, p: 0.5 };
        let err = DpModel::build(&env, &DpConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StateCap { count: 1_000_000, .. }));
    }

    #[test]
    fn csv_dump_has_row_per_state() {
        let mut env = deterministic();
        env.users[0].arrivals = ArrivalProcess::Bernoulli { p: 0.5 };
        env.service = ServiceModel::Logistic;
        let sol = dp_optimal(&env, &DpConfig::with_grid(vec![0.0, 1.0]), 0.3).unwrap();
        let csv = sol.to_csv();
        assert_eq!(csv.lines().count(), 1 + sol.model().num_states());
    }

    #[test]
    fn transitions_are_stochastic() {
        let mut env = deterministic();
        env.users[0].deadline = 2;
        env.users[0].arrivals = ArrivalProcess::Bernoulli { p: 0.4 };
        env.users[0].channel = ChannelProcess::iid(vec![1.0, 2.0], vec![0.3, 0.7]);
        env.service = ServiceModel::Logistic;
        let m = DpModel::build(&env, &DpConfig::with_grid(vec![0.0, 0.5, 1.0])).unwrap();
        assert_eq!(m.num_states(), 8);
        for s in 0..m.num_states() {
            for a in &m.actions[s] {
                let total: f64 = a.next.iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        let init: f64 = m.initial_distribution().iter().sum();
        assert!((init - 1.0).abs() < 1e-12);
    }
}
