//! Arrival and channel processes, plus the hidden factors (service period,
//! switching schedule) that make an environment partially observable.
//!
//! Every sampler consumes a fixed number of random draws per call so that two
//! environments driven by equal seeds stay in lockstep.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-slot job arrivals of one user (or flow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    Bernoulli { p: f64 },
    Binomial { trials: u32, p: f64 },
    /// Poisson sampled by inversion and clamped at `cap`.
    Poisson { mean: f64, cap: u32 },
    /// `probs[k]` is the probability of `k` arrivals.
    Categorical { probs: Vec<f64> },
    /// Recorded counts, replayed cyclically from slot 0.
    Trace { values: Arc<[u32]> },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        match self {
            ArrivalProcess::Bernoulli { p } | ArrivalProcess::Binomial { p, .. } if !prob(*p) => {
                Err(Error::Config(format!("arrival probability {p} outside [0,1]")))
            }
            ArrivalProcess::Poisson { mean, .. } if !(mean.is_finite() && *mean >= 0.0) => {
                Err(Error::Config(format!("poisson mean {mean} must be >= 0")))
            }
            ArrivalProcess::Categorical { probs } => check_distribution(probs, "arrival pmf"),
            ArrivalProcess::Trace { values } if values.is_empty() => {
                Err(Error::Config("empty arrival trace".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, slot: u64) -> u32 {
        match self {
            ArrivalProcess::Bernoulli { p } => u32::from(rng.random::<f64>() < *p),
            ArrivalProcess::Binomial { trials, p } => {
                (0..*trials).filter(|_| rng.random::<f64>() < *p).count() as u32
            }
            ArrivalProcess::Poisson { mean, cap } => {
                let u: f64 = rng.random();
                let mut k = 0u32;
                let mut pk = (-mean).exp();
                let mut cdf = pk;
                while u > cdf && k < *cap {
                    k += 1;
                    pk *= mean / f64::from(k);
                    cdf += pk;
                }
                k
            }
            ArrivalProcess::Categorical { probs } => sample_index(rng, probs) as u32,
            ArrivalProcess::Trace { values } => values[(slot % values.len() as u64) as usize],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ArrivalProcess::Bernoulli { p } => *p,
            ArrivalProcess::Binomial { trials, p } => f64::from(*trials) * p,
            ArrivalProcess::Poisson { .. } | ArrivalProcess::Categorical { .. } => self
                .pmf()
                .map(|pmf| pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum())
                .unwrap_or(f64::NAN),
            ArrivalProcess::Trace { values } => {
                values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64
            }
        }
    }

    /// Probability mass function over `0..=max`, when the support is bounded
    /// and the process is i.i.d. across slots.
    pub fn pmf(&self) -> Option<Vec<f64>> {
        match self {
            ArrivalProcess::Bernoulli { p } => Some(vec![1.0 - p, *p]),
            ArrivalProcess::Binomial { trials, p } => {
                let n = *trials as usize;
                let mut pmf = vec![0.0; n + 1];
                for (k, slot) in pmf.iter_mut().enumerate() {
                    *slot = binomial_coefficient(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
                }
                Some(pmf)
            }
            ArrivalProcess::Poisson { mean, cap } => {
                let mut pmf = Vec::with_capacity(*cap as usize + 1);
                let mut pk = (-mean).exp();
                let mut acc = 0.0;
                for k in 0..*cap {
                    pmf.push(pk);
                    acc += pk;
                    pk *= mean / f64::from(k + 1);
                }
                pmf.push((1.0 - acc).max(0.0));
                Some(pmf)
            }
            ArrivalProcess::Categorical { probs } => Some(probs.clone()),
            ArrivalProcess::Trace { .. } => None,
        }
    }

    /// Largest count the process can emit in one slot.
    pub fn max_arrivals(&self) -> u32 {
        match self {
            ArrivalProcess::Bernoulli { .. } => 1,
            ArrivalProcess::Binomial { trials, .. } => *trials,
            ArrivalProcess::Poisson { cap, .. } => *cap,
            ArrivalProcess::Categorical { probs } => probs.len().saturating_sub(1) as u32,
            ArrivalProcess::Trace { values } => values.iter().copied().max().unwrap_or(0),
        }
    }

    /// Binomial process over `trials` draws with the requested mean.
    pub fn binomial_with_mean(mean: f64, trials: u32) -> Result<Self> {
        if trials == 0 || mean < 0.0 || mean > f64::from(trials) {
            return Err(Error::Config(format!(
                "cannot build binomial({trials}) with mean {mean}"
            )));
        }
        Ok(ArrivalProcess::Binomial {
            trials,
            p: mean / f64::from(trials),
        })
    }
}

/// Finite-state channel whose state index maps to a positive level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelProcess {
    Markov {
        levels: Vec<f64>,
        /// Row-stochastic transition matrix over level indices.
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    /// Recorded level indices, replayed cyclically from slot 0.
    Trace { levels: Vec<f64>, indices: Arc<[usize]> },
}

impl ChannelProcess {
    pub fn constant(level: f64) -> Self {
        Self::iid(vec![level], vec![1.0])
    }

    /// Independent draws from `probs` every slot.
    pub fn iid(levels: Vec<f64>, probs: Vec<f64>) -> Self {
        let transition = vec![probs.clone(); levels.len()];
        ChannelProcess::Markov {
            levels,
            transition,
            initial: probs,
        }
    }

    /// Chain that keeps its level with probability `stay` and otherwise
    /// redraws from `stationary`, which is then its stationary law.
    pub fn sticky(levels: Vec<f64>, stationary: Vec<f64>, stay: f64) -> Self {
        let n = levels.len();
        let transition = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (1.0 - stay) * stationary[j] + if i == j { stay } else { 0.0 })
                    .collect()
            })
            .collect();
        ChannelProcess::Markov {
            levels,
            transition,
            initial: stationary,
        }
    }

    /// Sticky chain over `levels` (sorted ascending) whose stationary law is
    /// geometric, `pi_k ∝ q^k`, with `q` chosen so the mean level is `mean`.
    pub fn sticky_with_mean(levels: Vec<f64>, mean: f64, stay: f64) -> Result<Self> {
        let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(mean > lo && mean < hi) {
            return Err(Error::Config(format!(
                "mean channel level {mean} must lie strictly inside ({lo}, {hi})"
            )));
        }
        let law = |q: f64| -> Vec<f64> {
            let w: Vec<f64> = (0..levels.len()).map(|k| q.powi(k as i32)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        };
        let mean_of = |q: f64| -> f64 { law(q).iter().zip(&levels).map(|(p, l)| p * l).sum() };
        // mean_of is increasing in q for ascending levels.
        let (mut a, mut b) = (1e-9_f64, 1e9_f64);
        for _ in 0..200 {
            let m = (a * b).sqrt();
            if mean_of(m) < mean {
                a = m;
            } else {
                b = m;
            }
        }
        let stationary = law((a * b).sqrt());
        Ok(Self::sticky(levels, stationary, stay))
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.levels();
        if levels.is_empty() {
            return Err(Error::Config("channel needs at least one level".into()));
        }
        if let Some(bad) = levels.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("channel level {bad} must be > 0")));
        }
        match self {
            ChannelProcess::Markov {
                transition, initial, ..
            } => {
                if transition.len() != levels.len() || initial.len() != levels.len() {
                    return Err(Error::Config("channel matrix size differs from level count".into()));
                }
                check_distribution(initial, "channel initial law")?;
                for row in transition {
                    if row.len() != levels.len() {
                        return Err(Error::Config("channel transition row has wrong width".into()));
                    }
                    check_distribution(row, "channel transition row")?;
                }
                Ok(())
            }
            ChannelProcess::Trace { indices, .. } => {
                if indices.is_empty() {
                    return Err(Error::Config("empty channel trace".into()));
                }
                if let Some(i) = indices.iter().find(|&&i| i >= levels.len()) {
                    return Err(Error::Config(format!("channel trace index {i} has no level")));
                }
                Ok(())
            }
        }
    }

    pub fn levels(&self) -> &[f64] {
        match self {
            ChannelProcess::Markov { levels, .. } | ChannelProcess::Trace { levels, .. } => levels,
        }
    }

    pub fn level(&self, state: usize) -> f64 {
        self.levels()[state]
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            ChannelProcess::Markov { initial, .. } => sample_index(rng, initial),
            ChannelProcess::Trace { indices, .. } => indices[0],
        }
    }

    /// State for `slot`, given the state of the previous slot.
    pub fn next_state<R: Rng + ?Sized>(&self, rng: &mut R, current: usize, slot: u64) -> usize {
        match self {
            ChannelProcess::Markov { transition, .. } => sample_index(rng, &transition[current]),
            ChannelProcess::Trace { indices, .. } => indices[(slot % indices.len() as u64) as usize],
        }
    }

    /// Stationary (or empirical, for traces) law over level indices.
    pub fn stationary(&self) -> Vec<f64> {
        match self {
            ChannelProcess::Markov {
                transition, initial, ..
            } => {
                let n = initial.len();
                // Lazy power iteration converges for every finite chain.
                let mut pi = vec![1.0 / n as f64; n];
                for _ in 0..100_000 {
                    let mut next = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            next[j] += pi[i] * (0.5 * transition[i][j] + if i == j { 0.5 } else { 0.0 });
                        }
                    }
                    let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
                    pi = next;
                    if diff < 1e-15 {
                        break;
                    }
                }
                pi
            }
            ChannelProcess::Trace { levels, indices } => {
                let mut counts = vec![0.0; levels.len()];
                for &i in indices.iter() {
                    counts[i] += 1.0;
                }
                let n = indices.len() as f64;
                counts.into_iter().map(|c| c / n).collect()
            }
        }
    }

    pub fn mean_level(&self) -> f64 {
        self.stationary().iter().zip(self.levels()).map(|(p, l)| p * l).sum()
    }
}

/// Success probability under a periodic service outage: service is only
/// available in slots that are a multiple of `period`.
pub fn apply_hidden_period(t: u64, base_prob: f64, period: u32) -> f64 {
    if period <= 1 || t % u64::from(period) == 0 {
        base_prob
    } else {
        0.0
    }
}

/// A change of dynamics that takes effect at a given slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsChange {
    /// Each slot's arrivals become the sum of `factor` independent draws
    /// (traces are multiplied by `factor`).
    ScaleArrivals { factor: u32 },
    /// Per-user channel processes replaced wholesale.
    ReplaceChannels { channels: Vec<ChannelProcess> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEntry {
    pub slot: u64,
    pub change: DynamicsChange,
}

/// Piecewise-constant dynamics schedule, sorted by slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchSchedule {
    entries: Vec<SwitchEntry>,
}

/// Dynamics in force at one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveDynamics {
    pub arrival_factor: u32,
    /// Index into the schedule of the entry whose channels are active, if any.
    pub channel_entry: Option<usize>,
}

impl Default for ActiveDynamics {
    fn default() -> Self {
        ActiveDynamics {
            arrival_factor: 1,
            channel_entry: None,
        }
    }
}

impl SwitchSchedule {
    pub fn new(entries: Vec<SwitchEntry>) -> Result<Self> {
        let s = SwitchSchedule { entries };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.entries.windows(2) {
            if w[1].slot <= w[0].slot {
                return Err(Error::Config(format!(
                    "switch schedule entries at slots {} and {} overlap or are unsorted",
                    w[0].slot, w[1].slot
                )));
            }
        }
        for e in &self.entries {
            match &e.change {
                DynamicsChange::ScaleArrivals { factor } if *factor == 0 => {
                    return Err(Error::Config("arrival scale factor must be >= 1".into()))
                }
                DynamicsChange::ReplaceChannels { channels } => {
                    for c in channels {
                        c.validate()?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SwitchEntry] {
        &self.entries
    }

    pub fn channels_of(&self, entry: usize) -> Option<&[ChannelProcess]> {
        match &self.entries.get(entry)?.change {
            DynamicsChange::ReplaceChannels { channels } => Some(channels),
            DynamicsChange::ScaleArrivals { .. } => None,
        }
    }
}

/// Dynamics in force at slot `t`; a switch is active from its own slot on.
pub fn apply_switch(t: u64, schedule: &SwitchSchedule) -> ActiveDynamics {
    let mut active = ActiveDynamics::default();
    for (idx, entry) in schedule.entries.iter().enumerate() {
        if entry.slot > t {
            break;
        }
        match entry.change {
            DynamicsChange::ScaleArrivals { factor } => active.arrival_factor = factor,
            DynamicsChange::ReplaceChannels { .. } => active.channel_entry = Some(idx),
        }
    }
    active
}

pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum a hair below one.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Config(format!("{what} must be non-negative and non-empty")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hidden_period() {
        assert_eq!(apply_hidden_period(10, 0.5, 5), 0.5);
        assert_eq!(apply_hidden_period(11, 0.5, 5), 0.0);
        for t in 0..20 {
            assert_eq!(apply_hidden_period(t, 0.3, 1), 0.3);
        }
    }

    #[test]
    fn switch_boundary_is_inclusive() {
        let s = SwitchSchedule::new(vec![SwitchEntry {
            slot: 100_000,
            change: DynamicsChange::ScaleArrivals { factor: 2 },
        }])
        .unwrap();
        assert_eq!(apply_switch(99_999, &s).arrival_factor, 1);
        assert_eq!(apply_switch(100_000, &s).arrival_factor, 2);
        assert_eq!(apply_switch(u64::MAX, &SwitchSchedule::default()), ActiveDynamics::default());
    }

    #[test]
    fn overlapping_switches_rejected() {
        let e = |slot| SwitchEntry {
            slot,
            change: DynamicsChange::ScaleArrivals { factor: 2 },
        };
        assert!(SwitchSchedule::new(vec![e(5), e(5)]).is_err());
        assert!(SwitchSchedule::new(vec![e(6), e(5)]).is_err());
        assert!(SwitchSchedule::new(vec![e(5), e(6)]).is_ok());
    }

    #[test]
    fn channel_replacement_tracks_latest_entry() {
        let s = SwitchSchedule::new(vec![
            SwitchEntry {
                slot: 3,
                change: DynamicsChange::ReplaceChannels {
                    channels: vec![ChannelProcess::constant(2.0)],
                },
            },
            SwitchEntry {
                slot: 7,
                change: DynamicsChange::ScaleArrivals { factor: 3 },
            },
        ])
        .unwrap();
        assert_eq!(apply_switch(2, &s).channel_entry, None);
        let a = apply_switch(9, &s);
        assert_eq!(a.channel_entry, Some(0));
        assert_eq!(a.arrival_factor, 3);
    }

    #[test]
    fn pmfs_sum_to_one_and_match_means() {
        let procs = [
            ArrivalProcess::Bernoulli { p: 0.3 },
            ArrivalProcess::Binomial { trials: 6, p: 0.327 },
            ArrivalProcess::Poisson { mean: 1.5, cap: 12 },
            ArrivalProcess::Categorical {
                probs: vec![0.2, 0.5, 0.3],
            },
        ];
        for p in &procs {
            let pmf = p.pmf().unwrap();
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(pmf.len() as u32, p.max_arrivals() + 1);
        }
        assert!((procs[1].mean() - 6.0 * 0.327).abs() < 1e-12);
    }

    #[test]
    fn sampled_mean_close_to_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ArrivalProcess::Poisson { mean: 2.0, cap: 20 };
        let n = 50_000;
        let s: u64 = (0..n).map(|t| u64::from(p.sample(&mut rng, t))).sum();
        assert!((s as f64 / n as f64 - 2.0).abs() < 0.05);
    }

    #[test]
    fn sticky_mean_matches_target() {
        let c = ChannelProcess::sticky_with_mean(vec![1.0, 2.0, 3.0, 4.0], 1.79, 0.7).unwrap();
        c.validate().unwrap();
        assert!((c.mean_level() - 1.79).abs() < 1e-9);
    }

    #[test]
    fn trace_replays_cyclically() {
        let p = ArrivalProcess::Trace {
            values: Arc::from(vec![1, 0, 2]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got: Vec<u32> = (0..6).map(|t| p.sample(&mut rng, t)).collect();
        assert_eq!(got, vec![1, 0, 2, 1, 0, 2]);
    }
}
