use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// One trajectory: `T + 1` observations, `T` actions, rewards and done
/// flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// User index for per-user episodes of a decomposed environment.
    pub tag: Option<usize>,
}

impl Episode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tagged(user: usize) -> Self {
        Episode {
            tag: Some(user),
            ..Self::default()
        }
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.observations.len() != t + 1 || self.rewards.len() != t || self.dones.len() != t {
            return Err(Error::Shape(format!(
                "episode with {} observations, {t} actions, {} rewards, {} dones",
                self.observations.len(),
                self.rewards.len(),
                self.dones.len()
            )));
        }
        Ok(())
    }
}

/// Ring buffer of whole episodes.
#[derive(Debug, Clone)]
pub struct EpisodeReplay {
    capacity: usize,
    episodes: Vec<Episode>,
    cursor: usize,
}

impl EpisodeReplay {
    pub fn new(capacity: usize) -> Self {
        EpisodeReplay {
            capacity: capacity.max(1),
            episodes: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
        } else {
            self.episodes[self.cursor] = episode;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
        self.cursor = 0;
    }

    /// Up to `batch` distinct episodes, uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<&Episode> {
        let k = batch.min(self.episodes.len());
        sample(rng, self.episodes.len(), k).into_iter().map(|i| &self.episodes[i]).collect()
    }
}
