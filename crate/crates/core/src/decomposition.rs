//! User-level decomposition.
//!
//! One step of an `N`-user environment is split into `N` per-user samples,
//! each with its own observation `[i/N, B_i, c_i]`, action `e_i` and reward
//! `β_i d_i − λ e_i·B_i`. With the user index as a feature, a single agent
//! can be trained on all users' samples at once, and its input width does not
//! depend on `N`.

use crate::agent::replay::Episode;
use crate::agent_env::{scalar_multiplier, AgentEnv, AgentStep};
use crate::env::{Allocation, ObservabilityMask, SchedEnv, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubSample {
    /// Zero-based user index.
    pub user: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Width of a per-user observation; `max_deadline` sets the padded buffer
/// length.
pub fn sub_observation_width(max_deadline: usize, mask: &ObservabilityMask) -> usize {
    1 + if mask.buffers { max_deadline + 1 } else { 0 }
        + usize::from(mask.arrivals)
        + usize::from(mask.channels)
}

/// Observation of user `i`: normalized index, zero-padded buffer, arrivals,
/// channel level (each present only if unmasked).
pub fn sub_observation(env: &SchedEnv, i: usize, max_deadline: usize) -> Vec<f64> {
    let mask = env.mask();
    let n = env.num_users();
    let mut o = Vec::with_capacity(sub_observation_width(max_deadline, mask));
    o.push((i + 1) as f64 / n as f64);
    if mask.buffers {
        let b = env.buffers().user(i);
        o.extend(b.iter().map(|&x| f64::from(x)));
        o.extend(std::iter::repeat_n(0.0, max_deadline + 1 - b.len()));
    }
    if mask.arrivals {
        o.push(f64::from(env.arrivals()[i]));
    }
    if mask.channels {
        o.push(env.channel_levels()[i]);
    }
    o
}

/// Splits one joint step into per-user samples, ordered by user.
///
/// `pre_observations` are the per-user observations the actions were chosen
/// from.
pub fn decompose_step(
    pre_observations: &[Vec<f64>],
    action: &Allocation,
    outcome: &StepOutcome,
    weights: &[f64],
    lambda: f64,
    done: bool,
) -> Vec<SubSample> {
    (0..weights.len())
        .map(|i| SubSample {
            user: i,
            observation: pre_observations[i].clone(),
            action: action.0[i].clone(),
            reward: weights[i] * f64::from(outcome.served[i]) - lambda * outcome.resource_by_user[i],
            done,
        })
        .collect()
}

/// Regroups a time-ordered list of per-step sample sets into one replay
/// episode per user. `final_observations[i]` closes user `i`'s episode.
pub fn unify(steps: &[Vec<SubSample>], final_observations: &[Vec<f64>]) -> Vec<Episode> {
    let n = final_observations.len();
    let mut episodes: Vec<Episode> = (0..n).map(|i| Episode::tagged(i)).collect();
    for step in steps {
        for s in step {
            let ep = &mut episodes[s.user];
            ep.observations.push(s.observation.clone());
            ep.actions.push(s.action.clone());
            ep.rewards.push(s.reward);
            ep.dones.push(s.done);
        }
    }
    for (ep, o) in episodes.iter_mut().zip(final_observations) {
        ep.observations.push(o.clone());
    }
    episodes
}

/// A single-hop environment presented to an agent as `N` per-user slots.
#[derive(Debug, Clone)]
pub struct DecomposedEnv {
    env: SchedEnv,
    max_deadline: usize,
}

impl DecomposedEnv {
    pub fn new(env: SchedEnv) -> Self {
        let max_deadline = env.deadlines().iter().copied().max().unwrap_or(0);
        DecomposedEnv { env, max_deadline }
    }

    pub fn inner(&self) -> &SchedEnv {
        &self.env
    }

    pub fn inner_mut(&mut self) -> &mut SchedEnv {
        &mut self.env
    }

    fn sub_observations(&self) -> Vec<Vec<f64>> {
        (0..self.env.num_users())
            .map(|i| sub_observation(&self.env, i, self.max_deadline))
            .collect()
    }

    /// Joint allocation from per-user padded actions.
    pub fn joint_allocation(&self, actions: &[Vec<f64>]) -> Result<Allocation> {
        if actions.len() != self.env.num_users() {
            return Err(Error::Shape(format!(
                "expected {} per-user actions, got {}",
                self.env.num_users(),
                actions.len()
            )));
        }
        let rows = actions
            .iter()
            .zip(self.env.deadlines())
            .map(|(a, &d)| {
                if a.len() < d + 1 {
                    Err(Error::Shape(format!("per-user action of width {} < {}", a.len(), d + 1)))
                } else {
                    Ok(a[..=d].to_vec())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Allocation(rows))
    }
}

impl AgentEnv for DecomposedEnv {
    fn num_agents(&self) -> usize {
        self.env.num_users()
    }

    fn obs_dim(&self) -> usize {
        sub_observation_width(self.max_deadline, self.env.mask())
    }

    fn action_dim(&self) -> usize {
        self.max_deadline + 1
    }

    fn e_max(&self) -> f64 {
        self.env.e_max()
    }

    fn set_multipliers(&mut self, lambdas: &[f64]) -> Result<()> {
        self.env.lambda = scalar_multiplier(lambdas)?;
        Ok(())
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.env.reset();
        self.sub_observations()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<AgentStep> {
        let action = self.joint_allocation(actions)?;
        let action = self.env.apply_hard_cap(action);
        let lambda = self.env.lambda;
        let out = self.env.step(&action, lambda)?;
        let weights: Vec<f64> = self.env.users().iter().map(|u| u.weight).collect();
        let rewards = weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * f64::from(out.served[i]) - lambda * out.resource_by_user[i])
            .collect();
        Ok(AgentStep {
            observations: self.sub_observations(),
            rewards,
            reward: out.reward,
            throughput: out.throughput,
            resources: vec![out.resource],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ArrivalProcess, ChannelProcess};
    use crate::env::{EnvConfig, UserSpec};
    use crate::service::ServiceModel;

    fn env(n: usize) -> SchedEnv {
        let users = (0..n)
            .map(|i| UserSpec {
                deadline: 1 + i % 3,
                weight: 0.5 + i as f64 * 0.25,
                distance: 1.0,
                arrivals: ArrivalProcess::Binomial { trials: 3, p: 0.5 },
                channel: ChannelProcess::iid(vec![1.0, 2.0], vec![0.5, 0.5]),
            })
            .collect();
        SchedEnv::new(EnvConfig {
            users,
            e_max: 4.0,
            service: ServiceModel::Logistic,
            mask: ObservabilityMask::default(),
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn single_user_is_identity() {
        let mut e = env(1);
        let pre = vec![sub_observation(&e, 0, 1)];
        let a = Allocation(vec![vec![0.0, 2.0]]);
        let out = e.step(&a, 0.3).unwrap();
        let subs = decompose_step(&pre, &a, &out, &[0.5], 0.3, false);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].reward, out.reward);
    }

    #[test]
    fn zero_action_gives_zero_sub_rewards() {
        let mut e = env(4);
        let pre: Vec<_> = (0..4).map(|i| sub_observation(&e, i, 3)).collect();
        let a = Allocation::zeros(e.deadlines());
        let out = e.step(&a, 0.7).unwrap();
        let w: Vec<f64> = e.users().iter().map(|u| u.weight).collect();
        for s in decompose_step(&pre, &a, &out, &w, 0.7, false) {
            assert_eq!(s.reward, 0.0);
        }
    }

    #[test]
    fn unify_groups_by_user() {
        let mut d = DecomposedEnv::new(env(4));
        let mut obs = d.reset();
        let mut steps = Vec::new();
        for t in 0..100 {
            let acts: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0; 4]).collect();
            let joint = d.joint_allocation(&acts).unwrap();
            let pre = obs.clone();
            let out = d.inner_mut().step(&joint, 0.2).unwrap();
            let w: Vec<f64> = d.inner().users().iter().map(|u| u.weight).collect();
            steps.push(decompose_step(&pre, &joint, &out, &w, 0.2, t == 99));
            obs = (0..4).map(|i| sub_observation(d.inner(), i, 3)).collect();
        }
        let eps = unify(&steps, &obs);
        assert_eq!(eps.len(), 4);
        for (i, ep) in eps.iter().enumerate() {
            assert_eq!(ep.len(), 100);
            assert_eq!(ep.tag, Some(i));
            assert_eq!(ep.observations.len(), 101);
            assert!(ep.dones[99]);
        }
        assert!(unify(&[], &[]).is_empty());
    }

    #[test]
    fn sub_observation_layout() {
        let e = env(3);
        let o = sub_observation(&e, 1, 3);
        assert_eq!(o.len(), sub_observation_width(3, e.mask()));
        assert!((o[0] - 2.0 / 3.0).abs() < 1e-15);
        // user 1 has deadline 2: three buffer entries then one pad.
        assert_eq!(o[4], 0.0);
    }
}
