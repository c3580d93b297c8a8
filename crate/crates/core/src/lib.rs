//! Delay-constrained multi-user scheduling: slot-level environments,
//! heuristic and exact baselines, a dual loop for the average resource
//! constraint and a recurrent double-critic actor-critic learner.

pub mod agent;
pub mod agent_env;
pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod decomposition;
pub mod dual;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod multihop;
pub mod policy;
pub mod presets;
pub mod service;
pub mod trace;

pub use agent::{AgentConfig, Rsd4Agent, TrainReport};
pub use agent_env::{AgentEnv, AgentStep};
pub use config::{AlgorithmKind, ExperimentConfig, ResolvedEnv};
pub use decomposition::DecomposedEnv;
pub use dual::{solve_constrained, DualConfig, DualState, Evaluation, InnerSolver};
pub use dynamics::{ArrivalProcess, ChannelProcess};
pub use env::{Allocation, BufferState, EnvConfig, HardCap, ObservabilityMask, SchedEnv, UserSpec};
pub use error::{Error, Result};
pub use multihop::{MultihopEnv, TopologyConfig};
pub use service::{success_probability, ServiceModel};
