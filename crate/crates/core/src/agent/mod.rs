//! The recurrent twin actor-critic agent.
//!
//! Two actor-critic pairs with target copies. Critic targets use the
//! importance-weighted softmax over `K` noisy target-actor actions, with the
//! smaller of the two target critics as the value estimate. Actors follow
//! the deterministic policy gradient through their own critic every
//! `policy_delay` critic updates, after which all targets move softly.

pub mod config;
pub mod net;
pub mod replay;
pub mod softmax;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent_env::AgentEnv;
use crate::autodiff::{clip_grad_norm, soft_update, Adam, Checkpoint, Graph, LstmState, Matrix, ParamSet, Var};
use crate::error::{Error, Result};

pub use config::{ActorSelection, Activation, AgentConfig};
pub use net::{DoubleBranchNet, NetKind, NetSpec};
pub use replay::{Episode, EpisodeReplay};
pub use softmax::{gaussian_log_density, softmax_value};

/// `y_t = r_t + γ(1 − done_t)·v_{t+1}`.
pub fn bellman_targets(rewards: &[f64], dones: &[bool], next_values: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_values)
        .map(|((&r, &d), &v)| if d { r } else { r + gamma * v })
        .collect()
}

/// Episodes of equal length laid out time-major.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    /// `len + 1` matrices of `size × obs_dim`.
    pub obs: Vec<Matrix>,
    /// `len` matrices of `size × action_dim`.
    pub actions: Vec<Matrix>,
    /// `prev[t]` holds `a_{t−1}` (zeros at `t = 0`); `len + 1` entries.
    pub prev: Vec<Matrix>,
    pub rewards: Vec<Vec<f64>>,
    pub dones: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_episodes(episodes: &[&Episode]) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let len = first.len();
        let action_dim = first.actions.first().map_or(0, Vec::len);
        for e in episodes {
            e.validate()?;
            if e.len() != len {
                return Err(Error::Shape(format!("episodes of length {} and {len} in one batch", e.len())));
            }
        }
        let size = episodes.len();
        let rows = |f: &dyn Fn(&Episode) -> &Vec<f64>| Matrix::from_rows(&episodes.iter().map(|e| f(e).clone()).collect::<Vec<_>>());
        let obs = (0..=len).map(|t| rows(&|e| &e.observations[t])).collect::<Result<Vec<_>>>()?;
        let actions = (0..len).map(|t| rows(&|e| &e.actions[t])).collect::<Result<Vec<_>>>()?;
        let mut prev = vec![Matrix::zeros(size, action_dim)];
        prev.extend(actions.iter().cloned());
        Ok(Batch {
            size,
            len,
            obs,
            actions,
            prev,
            rewards: (0..len).map(|t| episodes.iter().map(|e| e.rewards[t]).collect()).collect(),
            dones: (0..len).map(|t| episodes.iter().map(|e| e.dones[t]).collect()).collect(),
        })
    }
}

/// Recurrent state carried while acting.
#[derive(Debug, Clone)]
pub struct RolloutState {
    rows: usize,
    episode: usize,
    prev: Matrix,
    actor: [Option<(Matrix, Matrix)>; 2],
    critic: [Option<(Matrix, Matrix)>; 2],
}

/// Per-slot averages over evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub reward: f64,
    pub throughput: f64,
    pub resource: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub eval_reward: f64,
    pub resource: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub critic_updates: usize,
    pub actor_updates: usize,
    /// Set when training stopped early on a non-finite evaluation or
    /// exploding parameters.
    pub diverged: Option<String>,
}

impl TrainReport {
    /// Learning curve as CSV: `episode,eval_reward,resource,throughput`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("episode,eval_reward,resource,throughput\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{},{}\n", p.episode, p.eval_reward, p.resource, p.throughput));
        }
        out
    }
}

const PARAM_NORM_LIMIT: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct Rsd4Agent {
    config: AgentConfig,
    actor_net: DoubleBranchNet,
    critic_net: DoubleBranchNet,
    actors: [ParamSet; 2],
    critics: [ParamSet; 2],
    target_actors: [ParamSet; 2],
    target_critics: [ParamSet; 2],
    actor_opts: [Adam; 2],
    critic_opts: [Adam; 2],
    replay: EpisodeReplay,
    rng: ChaCha8Rng,
    critic_updates: usize,
    actor_updates: usize,
}

fn leaf_state(g: &mut Graph, s: &Option<(Matrix, Matrix)>) -> Option<LstmState> {
    s.as_ref().map(|(h, c)| LstmState {
        h: g.leaf(h.clone()),
        c: g.leaf(c.clone()),
    })
}

fn read_state(g: &Graph, s: Option<LstmState>) -> Option<(Matrix, Matrix)> {
    s.map(|s| (g.value(s.h).clone(), g.value(s.c).clone()))
}

fn leaves(g: &mut Graph, ms: &[Matrix]) -> Vec<Var> {
    ms.iter().map(|m| g.leaf(m.clone())).collect()
}

impl Rsd4Agent {
    pub fn new(obs_dim: usize, action_dim: usize, e_max: f64, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || action_dim == 0 || !(e_max.is_finite() && e_max > 0.0) {
            return Err(Error::Config("agent needs positive widths and e_max".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let spec = |kind| NetSpec {
            kind,
            obs_dim,
            action_dim,
            e_max,
            fc_width: config.fc_width,
            lstm_width: config.lstm_width,
            head_width: config.head_width,
            recurrent: config.recurrent,
            activation: config.activation,
        };
        let (actor_net, a0) = DoubleBranchNet::new(spec(NetKind::Actor), &mut rng);
        let (_, a1) = DoubleBranchNet::new(spec(NetKind::Actor), &mut rng);
        let (critic_net, c0) = DoubleBranchNet::new(spec(NetKind::Critic), &mut rng);
        let (_, c1) = DoubleBranchNet::new(spec(NetKind::Critic), &mut rng);
        Ok(Rsd4Agent {
            actor_opts: [Adam::new(config.actor_lr), Adam::new(config.actor_lr)],
            critic_opts: [Adam::new(config.critic_lr), Adam::new(config.critic_lr)],
            replay: EpisodeReplay::new(config.replay_capacity),
            target_actors: [a0.clone(), a1.clone()],
            target_critics: [c0.clone(), c1.clone()],
            actors: [a0, a1],
            critics: [c0, c1],
            actor_net,
            critic_net,
            rng,
            config,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn for_env<E: AgentEnv + ?Sized>(env: &E, config: AgentConfig) -> Result<Self> {
        Self::new(env.obs_dim(), env.action_dim(), env.e_max(), config)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn spec(&self) -> NetSpec {
        self.actor_net.spec
    }

    pub fn replay(&self) -> &EpisodeReplay {
        &self.replay
    }

    pub fn replay_mut(&mut self) -> &mut EpisodeReplay {
        &mut self.replay
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> usize {
        self.actor_updates
    }

    /// Scalar parameters of the online networks (two actors, two critics).
    pub fn num_parameters(&self) -> usize {
        self.actors.iter().chain(&self.critics).map(ParamSet::num_scalars).sum()
    }

    pub fn actor_params(&self, j: usize) -> &ParamSet {
        &self.actors[j]
    }

    pub fn actor_params_mut(&mut self, j: usize) -> &mut ParamSet {
        &mut self.actors[j]
    }

    pub fn critic_params_mut(&mut self, j: usize) -> &mut ParamSet {
        &mut self.critics[j]
    }

    fn parameter_norm(&self) -> f64 {
        self.actors.iter().chain(&self.critics).map(ParamSet::norm).fold(0.0, f64::max)
    }

    pub fn begin_episode(&self, rows: usize, episode: usize) -> RolloutState {
        let zero = |net: &DoubleBranchNet| {
            net.is_recurrent()
                .then(|| (Matrix::zeros(rows, net.spec.lstm_width), Matrix::zeros(rows, net.spec.lstm_width)))
        };
        RolloutState {
            rows,
            episode,
            prev: Matrix::zeros(rows, self.actor_net.spec.action_dim),
            actor: [zero(&self.actor_net), zero(&self.actor_net)],
            critic: [zero(&self.critic_net), zero(&self.critic_net)],
        }
    }

    /// One action per observation row; advances the recurrent state.
    pub fn act(&mut self, st: &mut RolloutState, obs: &[Vec<f64>], explore: bool) -> Result<Vec<Vec<f64>>> {
        let o = Matrix::from_rows(obs)?;
        let spec = self.actor_net.spec;
        if o.rows != st.rows || o.cols != spec.obs_dim {
            return Err(Error::Shape(format!(
                "observation batch {}x{} for a {}-row state of width {}",
                o.rows, o.cols, st.rows, spec.obs_dim
            )));
        }
        let mut proposals: Vec<Matrix> = Vec::with_capacity(2);
        for j in 0..2 {
            let mut g = Graph::new();
            let p = self.actors[j].bind(&mut g);
            let ov = g.leaf(o.clone());
            let pv = g.leaf(st.prev.clone());
            let s = leaf_state(&mut g, &st.actor[j]);
            let s = self.actor_net.recurrent_step(&mut g, &p, ov, pv, s)?;
            let a = self.actor_net.head(&mut g, &p, ov, None, s.map(|s| s.h))?;
            st.actor[j] = read_state(&g, s);
            proposals.push(g.value(a).clone());
        }
        let choice: Vec<usize> = match self.config.selection {
            ActorSelection::Alternate => vec![st.episode % 2; st.rows],
            ActorSelection::CriticScore => {
                let mut scores: Vec<Vec<f64>> = Vec::with_capacity(2);
                for (j, prop) in proposals.iter().enumerate() {
                    let mut g = Graph::new();
                    let p = self.critics[j].bind(&mut g);
                    let ov = g.leaf(o.clone());
                    let pv = g.leaf(st.prev.clone());
                    let av = g.leaf(prop.clone());
                    let s = leaf_state(&mut g, &st.critic[j]);
                    let s = self.critic_net.recurrent_step(&mut g, &p, ov, pv, s)?;
                    let q = self.critic_net.head(&mut g, &p, ov, Some(av), s.map(|s| s.h))?;
                    st.critic[j] = read_state(&g, s);
                    scores.push(g.value(q).data.clone());
                }
                (0..st.rows).map(|r| usize::from(scores[1][r] > scores[0][r])).collect()
            }
        };
        let e_max = spec.e_max;
        let sigma = self.config.explore_noise * e_max;
        let mut out = Vec::with_capacity(st.rows);
        for (r, &j) in choice.iter().enumerate() {
            let mut a = proposals[j].row(r).to_vec();
            if explore && sigma > 0.0 {
                for x in &mut a {
                    let eps: f64 = self.rng.sample(StandardNormal);
                    *x += sigma * eps;
                }
            }
            a.iter_mut().for_each(|x| *x = x.clamp(0.0, e_max));
            out.push(a);
        }
        st.prev = Matrix::from_rows(&out)?;
        Ok(out)
    }

    /// Recurrent features of `net` for every step of the batch.
    fn features(&self, net: &DoubleBranchNet, params: &ParamSet, batch: &Batch) -> Result<Vec<Option<Matrix>>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let mut state = net.zero_state(&mut g, batch.size);
        let mut out = Vec::with_capacity(batch.obs.len());
        for t in 0..batch.obs.len() {
            let o = g.leaf(batch.obs[t].clone());
            let pv = g.leaf(batch.prev[t].clone());
            state = net.recurrent_step(&mut g, &p, o, pv, state)?;
            out.push(state.map(|s| g.value(s.h).clone()));
        }
        Ok(out)
    }

    /// Bellman targets per critic, per step, per batch row.
    pub fn critic_targets(&mut self, batch: &Batch) -> Result<[Vec<Vec<f64>>; 2]> {
        let k = self.config.noise_samples;
        let e_max = self.actor_net.spec.e_max;
        let sigma = self.config.target_noise * e_max;
        let clip = self.config.noise_clip * e_max;
        let a_dim = self.actor_net.spec.action_dim;
        let critic_feats = [
            self.features(&self.critic_net, &self.target_critics[0], batch)?,
            self.features(&self.critic_net, &self.target_critics[1], batch)?,
        ];
        let mut out: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let actor_feats = self.features(&self.actor_net, &self.target_actors[i], batch)?;
            let mut targets = Vec::with_capacity(batch.len);
            for t in 0..batch.len {
                let next = t + 1;
                let mut g = Graph::new();
                let pa = self.target_actors[i].bind(&mut g);
                let ov = g.leaf(batch.obs[next].clone());
                let fv = actor_feats[next].clone().map(|f| g.leaf(f));
                let mean = self.actor_net.head(&mut g, &pa, ov, None, fv)?;
                let mean = g.value(mean).clone();
                let mut sampled = Matrix::zeros(batch.size * k, a_dim);
                let mut log_p = vec![0.0; batch.size * k];
                for r in 0..batch.size {
                    for s in 0..k {
                        let row = r * k + s;
                        let mut eps = vec![0.0; a_dim];
                        if sigma > 0.0 {
                            for e in &mut eps {
                                let z: f64 = self.rng.sample(StandardNormal);
                                *e = (sigma * z).clamp(-clip, clip);
                            }
                            log_p[row] = gaussian_log_density(&eps, sigma);
                        }
                        for d in 0..a_dim {
                            sampled.data[row * a_dim + d] = (mean.get(r, d) + eps[d]).clamp(0.0, e_max);
                        }
                    }
                }
                let obs_rep = batch.obs[next].repeat_rows(k);
                let mut q_min = vec![f64::INFINITY; batch.size * k];
                for (j, feats) in critic_feats.iter().enumerate() {
                    let mut g = Graph::new();
                    let pc = self.target_critics[j].bind(&mut g);
                    let ov = g.leaf(obs_rep.clone());
                    let av = g.leaf(sampled.clone());
                    let fv = feats[next].as_ref().map(|f| g.leaf(f.repeat_rows(k)));
                    let q = self.critic_net.head(&mut g, &pc, ov, Some(av), fv)?;
                    for (m, &v) in q_min.iter_mut().zip(&g.value(q).data) {
                        *m = m.min(v);
                    }
                }
                let values: Vec<f64> = (0..batch.size)
                    .map(|r| softmax_value(&q_min[r * k..(r + 1) * k], &log_p[r * k..(r + 1) * k], self.config.softmax_beta))
                    .collect();
                targets.push(bellman_targets(&batch.rewards[t], &batch.dones[t], &values, self.config.gamma));
            }
            out[i] = targets;
        }
        Ok(out)
    }

    fn descend(opt: &mut Adam, params: &mut ParamSet, mut grads: Vec<Matrix>, clip: Option<f64>) -> Result<f64> {
        let norm = match clip {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt(),
        };
        opt.step(params, &grads)?;
        Ok(norm)
    }

    /// One mean-squared Bellman step for each critic; returns the losses.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<[f64; 2]> {
        let targets = self.critic_targets(batch)?;
        let mut losses = [0.0; 2];
        let scale = 1.0 / (batch.size * batch.len) as f64;
        for i in 0..2 {
            let mut g = Graph::new();
            let p = self.critics[i].bind(&mut g);
            let obs = leaves(&mut g, &batch.obs[..batch.len]);
            let prev = leaves(&mut g, &batch.prev[..batch.len]);
            let acts = leaves(&mut g, &batch.actions);
            let qs = self.critic_net.forward_sequence(&mut g, &p, &obs, &prev, Some(&acts))?;
            let mut total: Option<Var> = None;
            for (t, &q) in qs.iter().enumerate() {
                let y = g.leaf(Matrix::from_vec(batch.size, 1, targets[i][t].clone())?);
                let d = g.sub(q, y)?;
                let sq = g.square(d);
                let s = g.sum(sq);
                total = Some(match total {
                    Some(acc) => g.add(acc, s)?,
                    None => s,
                });
            }
            let total = total.ok_or_else(|| Error::Shape("empty episodes".into()))?;
            let loss = g.scale(total, scale);
            let value = g.value(loss).scalar();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("critic {i} loss")));
            }
            let grads = g.backward(loss)?;
            let grads = p.gradients(&g, &grads);
            Self::descend(&mut self.critic_opts[i], &mut self.critics[i], grads, self.config.grad_clip)?;
            losses[i] = value;
        }
        self.critic_updates += 1;
        Ok(losses)
    }

    /// Deterministic policy gradient step for both actors, then soft target
    /// updates. Returns the larger pre-clip gradient norm.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let mut norm: f64 = 0.0;
        for i in 0..2 {
            let mut g = Graph::new();
            let pa = self.actors[i].bind(&mut g);
            let pc = self.critics[i].bind(&mut g);
            let obs = leaves(&mut g, &batch.obs[..batch.len]);
            let prev = leaves(&mut g, &batch.prev[..batch.len]);
            let acts = self.actor_net.forward_sequence(&mut g, &pa, &obs, &prev, None)?;
            let qs = self.critic_net.forward_sequence(&mut g, &pc, &obs, &prev, Some(&acts))?;
            let mut total: Option<Var> = None;
            for &q in &qs {
                let s = g.sum(q);
                total = Some(match total {
                    Some(acc) => g.add(acc, s)?,
                    None => s,
                });
            }
            let total = total.ok_or_else(|| Error::Shape("empty episodes".into()))?;
            let loss = g.scale(total, -1.0 / batch.size as f64);
            if !g.value(loss).scalar().is_finite() {
                return Err(Error::NonFinite(format!("actor {i} objective")));
            }
            let grads = g.backward(loss)?;
            let grads = pa.gradients(&g, &grads);
            norm = norm.max(Self::descend(&mut self.actor_opts[i], &mut self.actors[i], grads, self.config.grad_clip)?);
        }
        let tau = self.config.tau_soft;
        for i in 0..2 {
            soft_update(&mut self.target_actors[i], &self.actors[i], tau)?;
            soft_update(&mut self.target_critics[i], &self.critics[i], tau)?;
        }
        self.actor_updates += 1;
        Ok(norm)
    }

    /// `updates_per_episode` critic updates from replay, with an actor
    /// update after every `policy_delay`-th.
    pub fn learn(&mut self) -> Result<()> {
        if self.replay.is_empty() {
            return Ok(());
        }
        for _ in 0..self.config.updates_per_episode {
            let batch = {
                let picked = self.replay.sample(&mut self.rng, self.config.batch_size);
                Batch::from_episodes(&picked)?
            };
            self.critic_update(&batch)?;
            if self.critic_updates % self.config.policy_delay == 0 {
                self.actor_update(&batch)?;
            }
        }
        Ok(())
    }

    /// Plays one episode of `episode_len` slots; returns one replay episode
    /// per agent slot and the per-slot averages.
    pub fn run_episode<E: AgentEnv + ?Sized>(&mut self, env: &mut E, explore: bool, index: usize) -> Result<(Vec<Episode>, EvalMetrics)> {
        let n = env.num_agents();
        let horizon = self.config.episode_len;
        let mut obs = env.reset();
        let mut st = self.begin_episode(n, index);
        let mut episodes: Vec<Episode> = (0..n)
            .map(|i| if n > 1 { Episode::tagged(i) } else { Episode::new() })
            .collect();
        for (e, o) in episodes.iter_mut().zip(&obs) {
            e.observations.push(o.clone());
        }
        let (mut reward, mut throughput, mut resource) = (0.0, 0.0, 0.0);
        for t in 0..horizon {
            let actions = self.act(&mut st, &obs, explore)?;
            let out = env.step(&actions)?;
            for (i, e) in episodes.iter_mut().enumerate() {
                e.actions.push(actions[i].clone());
                e.rewards.push(out.rewards[i]);
                e.dones.push(t + 1 == horizon);
                e.observations.push(out.observations[i].clone());
            }
            reward += out.reward;
            throughput += out.throughput;
            resource += out.resources.iter().sum::<f64>();
            obs = out.observations;
        }
        let h = horizon as f64;
        Ok((
            episodes,
            EvalMetrics {
                reward: reward / h,
                throughput: throughput / h,
                resource: resource / h,
            },
        ))
    }

    /// Exploration-free averages over `episodes` episodes.
    pub fn evaluate<E: AgentEnv + ?Sized>(&mut self, env: &mut E, episodes: usize) -> Result<EvalMetrics> {
        let mut acc = EvalMetrics {
            reward: 0.0,
            throughput: 0.0,
            resource: 0.0,
        };
        for k in 0..episodes.max(1) {
            let (_, m) = self.run_episode(env, false, k)?;
            acc.reward += m.reward;
            acc.throughput += m.throughput;
            acc.resource += m.resource;
        }
        let n = episodes.max(1) as f64;
        Ok(EvalMetrics {
            reward: acc.reward / n,
            throughput: acc.throughput / n,
            resource: acc.resource / n,
        })
    }

    /// Runs `episodes` training episodes, evaluating on a clone of `env`
    /// every `eval_every` episodes.
    pub fn train<E: AgentEnv + Clone>(&mut self, env: &mut E) -> Result<TrainReport> {
        let spec = self.actor_net.spec;
        if env.obs_dim() != spec.obs_dim || env.action_dim() != spec.action_dim {
            return Err(Error::Shape(format!(
                "agent built for {}/{} but environment has {}/{}",
                spec.obs_dim,
                spec.action_dim,
                env.obs_dim(),
                env.action_dim()
            )));
        }
        let mut eval_env = env.clone();
        let mut report = TrainReport::default();
        for m in 0..self.config.episodes {
            let (episodes, _) = self.run_episode(env, true, m)?;
            for e in episodes {
                self.replay.push(e)?;
            }
            self.learn()?;
            let every = self.config.eval_every;
            if every > 0 && (m + 1) % every == 0 {
                let metrics = self.evaluate(&mut eval_env, self.config.eval_episodes)?;
                report.curve.push(CurvePoint {
                    episode: m + 1,
                    eval_reward: metrics.reward,
                    resource: metrics.resource,
                    throughput: metrics.throughput,
                });
                let norm = self.parameter_norm();
                if !metrics.reward.is_finite() || !(norm < PARAM_NORM_LIMIT) {
                    report.diverged = Some(format!(
                        "episode {}: evaluation reward {}, parameter norm {norm}",
                        m + 1,
                        metrics.reward
                    ));
                    break;
                }
            }
        }
        report.critic_updates = self.critic_updates;
        report.actor_updates = self.actor_updates;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let spec = self.actor_net.spec;
        let mut ck = Checkpoint::new(serde_json::json!({
            "agent": self.config,
            "obs_dim": spec.obs_dim,
            "action_dim": spec.action_dim,
            "e_max": spec.e_max,
            "critic_updates": self.critic_updates,
            "actor_updates": self.actor_updates,
        }));
        for j in 0..2 {
            ck.insert(format!("actor{j}"), self.actors[j].clone());
            ck.insert(format!("critic{j}"), self.critics[j].clone());
            ck.insert(format!("target_actor{j}"), self.target_actors[j].clone());
            ck.insert(format!("target_critic{j}"), self.target_critics[j].clone());
        }
        ck
    }

    /// Rebuilds an agent from a checkpoint. Optimizer moments and the replay
    /// buffer are not stored and start empty.
    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        let meta = &ck.meta;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Serde(format!("checkpoint meta lacks {k}")));
        let config: AgentConfig = serde_json::from_value(field("agent")?).map_err(|e| Error::Serde(e.to_string()))?;
        let obs_dim = field("obs_dim")?.as_u64().ok_or_else(|| Error::Serde("obs_dim".into()))? as usize;
        let action_dim = field("action_dim")?.as_u64().ok_or_else(|| Error::Serde("action_dim".into()))? as usize;
        let e_max = field("e_max")?.as_f64().ok_or_else(|| Error::Serde("e_max".into()))?;
        let critic_updates = field("critic_updates")?.as_u64().unwrap_or(0) as usize;
        let actor_updates = field("actor_updates")?.as_u64().unwrap_or(0) as usize;
        let mut agent = Rsd4Agent::new(obs_dim, action_dim, e_max, config)?;
        for j in 0..2 {
            for (name, slot) in [
                (format!("actor{j}"), &mut agent.actors[j]),
                (format!("critic{j}"), &mut agent.critics[j]),
                (format!("target_actor{j}"), &mut agent.target_actors[j]),
                (format!("target_critic{j}"), &mut agent.target_critics[j]),
            ] {
                let set = ck.take(&name)?;
                slot.check_layout(&set)?;
                *slot = set;
            }
        }
        agent.critic_updates = critic_updates;
        agent.actor_updates = actor_updates;
        Ok(agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AgentConfig {
        AgentConfig {
            fc_width: 4,
            lstm_width: 4,
            head_width: 4,
            noise_samples: 3,
            batch_size: 2,
            episode_len: 3,
            episodes: 0,
            ..AgentConfig::default()
        }
    }

    fn episode(rewards: &[f64]) -> Episode {
        let t = rewards.len();
        Episode {
            observations: (0..=t).map(|k| vec![k as f64, 1.0]).collect(),
            actions: vec![vec![0.5]; t],
            rewards: rewards.to_vec(),
            dones: (0..t).map(|k| k + 1 == t).collect(),
            tag: None,
        }
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let mut agent = Rsd4Agent::new(2, 1, 1.0, AgentConfig { gamma: 0.0, ..small() }).unwrap();
        let e = [episode(&[1.0, -2.0, 0.5]), episode(&[0.0, 3.0, 4.0])];
        let batch = Batch::from_episodes(&[&e[0], &e[1]]).unwrap();
        let y = agent.critic_targets(&batch).unwrap();
        for yi in &y {
            assert_eq!(yi[0], vec![1.0, 0.0]);
            assert_eq!(yi[1], vec![-2.0, 3.0]);
            assert_eq!(yi[2], vec![0.5, 4.0]);
        }
    }

    #[test]
    fn terminal_step_does_not_bootstrap() {
        let mut agent = Rsd4Agent::new(2, 1, 1.0, small()).unwrap();
        let e = episode(&[1.0, 1.0, 7.0]);
        let batch = Batch::from_episodes(&[&e]).unwrap();
        let y = agent.critic_targets(&batch).unwrap();
        assert_eq!(y[0][2], vec![7.0]);
        assert_eq!(y[1][2], vec![7.0]);
    }

    #[test]
    fn geometric_series_targets() {
        // Constant reward 1 over three steps, γ = 0.9: true values are
        // 1 + 0.9 + 0.81, 1 + 0.9, 1.
        let v = [2.71, 1.9, 1.0];
        let next = [v[1], v[2], 123.0];
        let y = bellman_targets(&[1.0; 3], &[false, false, true], &next, 0.9);
        for (a, b) in y.iter().zip(v) {
            assert!((a - b).abs() < 1e-9);
        }
        let loss: f64 = y.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 3.0;
        assert!(loss < 1e-18);
    }

    #[test]
    fn act_is_deterministic_and_bounded() {
        let mut a = Rsd4Agent::new(2, 3, 10.0, small()).unwrap();
        let mut b = a.clone();
        let obs = vec![vec![0.3, -0.2]];
        let mut sa = a.begin_episode(1, 0);
        let mut sb = b.begin_episode(1, 0);
        for _ in 0..3 {
            assert_eq!(a.act(&mut sa, &obs, false).unwrap(), b.act(&mut sb, &obs, false).unwrap());
        }
        let mut wild = Rsd4Agent::new(2, 3, 10.0, AgentConfig { explore_noise: 1e6, ..small() }).unwrap();
        let mut s = wild.begin_episode(1, 0);
        for _ in 0..20 {
            let act = wild.act(&mut s, &obs, true).unwrap();
            assert!(act[0].iter().all(|x| (0.0..=10.0).contains(x)));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let agent = Rsd4Agent::new(2, 1, 1.0, small()).unwrap();
        let ck = Checkpoint::from_json(&agent.to_checkpoint().to_json().unwrap()).unwrap();
        let back = Rsd4Agent::from_checkpoint(ck).unwrap();
        assert_eq!(back.actors, agent.actors);
        assert_eq!(back.target_critics, agent.target_critics);
    }
}
