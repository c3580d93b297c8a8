use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the behavior policy combines the two actors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorSelection {
    /// Each actor's proposal is scored by its own critic; the higher wins.
    #[default]
    CriticScore,
    /// Actors take turns by episode.
    Alternate,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Hyperparameters. Noise scales are fractions of `e_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau_soft: f64,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub softmax_beta: f64,
    pub noise_samples: usize,
    pub batch_size: usize,
    pub episode_len: usize,
    pub episodes: usize,
    pub policy_delay: usize,
    pub updates_per_episode: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub fc_width: usize,
    pub lstm_width: usize,
    pub head_width: usize,
    /// Without it the LSTM branch is dropped (feedforward ablation).
    pub recurrent: bool,
    pub activation: Activation,
    pub selection: ActorSelection,
    pub replay_capacity: usize,
    /// Evaluate every this many episodes (0 disables the curve).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau_soft: 0.005,
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            softmax_beta: 1.0,
            noise_samples: 50,
            batch_size: 16,
            episode_len: 32,
            episodes: 200,
            policy_delay: 2,
            updates_per_episode: 1,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            fc_width: 32,
            lstm_width: 32,
            head_width: 32,
            recurrent: true,
            activation: Activation::Tanh,
            selection: ActorSelection::CriticScore,
            replay_capacity: 2000,
            eval_every: 10,
            eval_episodes: 4,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// TD3-like ablation: one noise sample and a plain average.
    pub fn td3_like(mut self) -> Self {
        self.softmax_beta = 0.0;
        self.noise_samples = 1;
        self
    }

    /// Feedforward ablation without the recurrent branch.
    pub fn sd3_like(mut self) -> Self {
        self.recurrent = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, closed_zero: bool| {
            let ok = v <= 1.0 && if closed_zero { v >= 0.0 } else { v > 0.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} out of range")))
            }
        };
        unit("gamma", self.gamma, true)?;
        unit("tau_soft", self.tau_soft, false)?;
        for (name, v) in [
            ("explore_noise", self.explore_noise),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
            ("softmax_beta", self.softmax_beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.target_noise == 0.0 && self.noise_samples > 1 {
            return Err(Error::Config("target_noise must be > 0 with several noise samples".into()));
        }
        for (name, v) in [
            ("noise_samples", self.noise_samples),
            ("batch_size", self.batch_size),
            ("episode_len", self.episode_len),
            ("policy_delay", self.policy_delay),
            ("fc_width", self.fc_width),
            ("head_width", self.head_width),
            ("replay_capacity", self.replay_capacity),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.recurrent && self.lstm_width == 0 {
            return Err(Error::Config("lstm_width must be >= 1".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}
