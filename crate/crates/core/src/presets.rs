//! Ready-made experiment configurations.

use std::path::PathBuf;

use crate::agent::AgentConfig;
use crate::baselines::EdfMode;
use crate::config::{
    AlgorithmKind, AlgorithmSection, ArrivalSource, ChannelSource, DpSection, DualSection, EnvironmentSection,
    ExperimentConfig, FlowConfig, HopConfig, RunSection, UserConfig,
};
use crate::env::{HardCap, ObservabilityMask};
use crate::multihop::{MultihopMask, NodeBudget};
use crate::service::ServiceModel;

/// Mean arrivals per slot of the four reference users.
pub const TABLE1_RATES: [f64; 4] = [1.96, 0.91, 2.46, 0.70];
pub const TABLE1_DEADLINES: [usize; 4] = [6, 6, 1, 1];
/// Mean channel level of the four reference users.
pub const TABLE1_CHANNEL_MEANS: [f64; 4] = [1.79, 1.83, 1.82, 1.77];
pub const CHANNEL_LEVELS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// Probability of keeping the channel level from one slot to the next.
pub const CHANNEL_STAY: f64 = 0.7;
pub const ARRIVAL_TRIALS: u32 = 6;
pub const TABLE1_E_MAX: f64 = 2.0;

pub const PRESET_NAMES: [&str; 4] = ["table1", "multihop", "tiny", "hidden"];

fn sticky(mean: f64) -> ChannelSource {
    ChannelSource::Sticky {
        levels: CHANNEL_LEVELS.to_vec(),
        mean,
        stay: CHANNEL_STAY,
    }
}

/// The four reference users: binomial arrivals and sticky four-level
/// channels matched to the listed means.
pub fn table1_users() -> Vec<UserConfig> {
    (0..4)
        .map(|i| UserConfig {
            deadline: TABLE1_DEADLINES[i],
            weight: 1.0,
            distance: 1.0,
            arrivals: ArrivalSource::BinomialMean {
                trials: ARRIVAL_TRIALS,
                mean: TABLE1_RATES[i],
            },
            channel: sticky(TABLE1_CHANNEL_MEANS[i]),
        })
        .collect()
}

fn algorithm(kind: AlgorithmKind) -> AlgorithmSection {
    AlgorithmSection {
        kind,
        edf_mode: EdfMode::Global,
        hard_cap: HardCap::None,
        agent: AgentConfig::default(),
        dp: DpSection::default(),
    }
}

/// Four users, EDF at `E_0 = 10` over five seeds.
pub fn table1_preset() -> ExperimentConfig {
    ExperimentConfig {
        environment: EnvironmentSection::SingleHop {
            e_max: TABLE1_E_MAX,
            service: ServiceModel::Logistic,
            mask: ObservabilityMask::default(),
            decompose: false,
            users: table1_users(),
        },
        algorithm: algorithm(AlgorithmKind::Edf),
        dual: DualSection {
            budgets: vec![10.0],
            ..DualSection::default()
        },
        run: RunSection {
            seeds: (0..5).collect(),
            slots: 5000,
            output: Some(PathBuf::from("out/table1")),
        },
        base_dir: PathBuf::new(),
    }
}

/// Nodes 1..6 with paths 1→2→3→5 (3 flows), 2→4→6 (4 flows) and 2→3
/// (5 flows); deadlines cycle through 3, 4, 5; nodes 1-4 schedule under
/// budgets 10, 30, 0.3, 3.
pub fn multihop_preset() -> ExperimentConfig {
    let paths: [(&[usize], usize); 3] = [(&[1, 2, 3, 5], 3), (&[2, 4, 6], 4), (&[2, 3], 5)];
    let mut flows = Vec::new();
    for (path, count) in paths {
        for _ in 0..count {
            let k = flows.len();
            flows.push(FlowConfig {
                path: path.to_vec(),
                deadline: 3 + k % 3,
                weight: 1.0,
                arrivals: ArrivalSource::Bernoulli { p: 0.5 },
                hops: (1..path.len())
                    .map(|h| HopConfig {
                        distance: 1.0,
                        channel: sticky(TABLE1_CHANNEL_MEANS[(k + h) % 4]),
                    })
                    .collect(),
            });
        }
    }
    let budgets = [(1, 10.0), (2, 30.0), (3, 0.3), (4, 3.0)]
        .into_iter()
        .map(|(node, budget)| NodeBudget { node, budget, lambda: 0.0 })
        .collect();
    ExperimentConfig {
        environment: EnvironmentSection::Multihop {
            e_max: TABLE1_E_MAX,
            service: ServiceModel::Logistic,
            mask: MultihopMask::default(),
            nodes: (1..=6).collect(),
            edges: vec![(1, 2), (2, 3), (3, 5), (2, 4), (4, 6)],
            budgets,
            flows,
        },
        algorithm: algorithm(AlgorithmKind::Rsd4),
        dual: DualSection {
            budgets: vec![1.0],
            max_iterations: 5,
            ..DualSection::default()
        },
        run: RunSection {
            seeds: vec![0],
            slots: 5000,
            output: Some(PathBuf::from("out/multihop")),
        },
        base_dir: PathBuf::new(),
    }
}

/// Learner settings for the tiny instance: 400 episodes of 32 slots.
pub fn tiny_agent() -> AgentConfig {
    AgentConfig {
        episodes: 400,
        noise_samples: 8,
        fc_width: 16,
        lstm_width: 16,
        head_width: 16,
        eval_every: 25,
        ..AgentConfig::default()
    }
}

/// Learner settings for the hidden-period instance: 600 episodes of 16
/// slots with four updates each.
pub fn hidden_agent() -> AgentConfig {
    AgentConfig {
        episodes: 600,
        episode_len: 16,
        updates_per_episode: 4,
        gamma: 0.9,
        noise_samples: 8,
        fc_width: 16,
        lstm_width: 16,
        head_width: 16,
        eval_every: 75,
        ..AgentConfig::default()
    }
}

/// One user, deadline 1, Bernoulli(0.5) arrivals, two i.i.d. channel
/// levels; solved exactly at `λ = 0.3`.
pub fn tiny_preset() -> ExperimentConfig {
    ExperimentConfig {
        environment: EnvironmentSection::SingleHop {
            e_max: 1.0,
            service: ServiceModel::Logistic,
            mask: ObservabilityMask::default(),
            decompose: false,
            users: vec![UserConfig {
                deadline: 1,
                weight: 1.0,
                distance: 1.0,
                arrivals: ArrivalSource::Bernoulli { p: 0.5 },
                channel: ChannelSource::Iid {
                    levels: vec![1.0, 2.0],
                    probs: vec![0.5, 0.5],
                },
            }],
        },
        algorithm: AlgorithmSection {
            dp: DpSection {
                levels: 2,
                ..DpSection::default()
            },
            agent: tiny_agent(),
            ..algorithm(AlgorithmKind::Dp)
        },
        dual: DualSection {
            lambdas: vec![0.3],
            ..DualSection::default()
        },
        run: RunSection {
            seeds: vec![0],
            slots: 5000,
            output: Some(PathBuf::from("out/tiny")),
        },
        base_dir: PathBuf::new(),
    }
}

/// One user, deadline 1, one arrival per slot, constant channel, and
/// service that only works in even slots. The observation never changes,
/// so only a learner with memory can tell the slots apart.
pub fn hidden_preset() -> ExperimentConfig {
    ExperimentConfig {
        environment: EnvironmentSection::SingleHop {
            e_max: 2.0,
            service: ServiceModel::Logistic,
            mask: ObservabilityMask {
                hidden_period: 2,
                ..ObservabilityMask::default()
            },
            decompose: false,
            users: vec![UserConfig {
                deadline: 1,
                weight: 1.0,
                distance: 1.0,
                arrivals: ArrivalSource::Bernoulli { p: 1.0 },
                channel: ChannelSource::Constant { level: 1.0 },
            }],
        },
        algorithm: AlgorithmSection {
            agent: hidden_agent(),
            ..algorithm(AlgorithmKind::Rsd4)
        },
        dual: DualSection {
            lambdas: vec![0.3],
            ..DualSection::default()
        },
        run: RunSection {
            seeds: (0..5).collect(),
            slots: 3200,
            output: Some(PathBuf::from("out/hidden")),
        },
        base_dir: PathBuf::new(),
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "table1" => Some(table1_preset()),
        "multihop" => Some(multihop_preset()),
        "tiny" => Some(tiny_preset()),
        "hidden" => Some(hidden_preset()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ResolvedEnv;

    #[test]
    fn multihop_preset_shape() {
        let cfg = multihop_preset();
        let ResolvedEnv::Multihop(topo) = cfg.resolve_environment(0).unwrap() else {
            panic!("multihop expected");
        };
        assert_eq!(topo.flows.len(), 12);
        assert!(topo.flows.iter().all(|f| (3..=5).contains(&f.deadline)));
        let budgets: Vec<f64> = topo.budgets.iter().map(|b| b.budget).collect();
        assert_eq!(budgets, vec![10.0, 30.0, 0.3, 3.0]);
        let per_path = |p: &[usize]| topo.flows.iter().filter(|f| f.path == p).count();
        assert_eq!((per_path(&[1, 2, 3, 5]), per_path(&[2, 4, 6]), per_path(&[2, 3])), (3, 4, 5));
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml_str(&text, std::path::Path::new("")).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn table1_generators_match_means() {
        let ResolvedEnv::SingleHop { config, .. } = table1_preset().resolve_environment(0).unwrap() else {
            panic!("single hop expected");
        };
        for (i, u) in config.users.iter().enumerate() {
            assert!((u.arrivals.mean() - TABLE1_RATES[i]).abs() < 1e-12);
            assert!((u.channel.mean_level() - TABLE1_CHANNEL_MEANS[i]).abs() < 1e-6);
        }
    }
}
