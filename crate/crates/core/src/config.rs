//! Declarative experiment files (TOML).
//!
//! ```toml
//! [environment]
//! kind = "single_hop"          # or "multihop"
//! e_max = 2.0
//! decompose = false
//! mask = { buffers = true, arrivals = false, channels = true, hidden_period = 1 }
//!
//! [[environment.users]]
//! deadline = 6
//! weight = 1.0
//! distance = 1.0
//! arrivals = { kind = "binomial_mean", trials = 6, mean = 1.96 }
//! channel = { kind = "sticky", levels = [1.0, 2.0, 3.0, 4.0], mean = 1.79, stay = 0.7 }
//!
//! [algorithm]
//! kind = "edf"                 # rsd4 | td3 | sd3 | edf | uniform | static | dp | zero
//!
//! [dual]
//! budgets = [10.0]             # E_0 cells
//! lambdas = []                 # fixed-multiplier cells
//!
//! [run]
//! seeds = [0, 1, 2, 3, 4]
//! slots = 5000
//! ```
//!
//! Arrival sources: `bernoulli {p}`, `binomial {trials, p}`,
//! `binomial_mean {trials, mean}`, `poisson {mean, cap}`,
//! `categorical {probs}`, `trace_file {path, user}`. Channel sources:
//! `constant {level}`, `iid {levels, probs}`, `sticky {levels, mean, stay}`,
//! `markov {levels, transition, initial}`, `trace_file {path, user, levels}`.
//! Trace paths are relative to the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::baselines::EdfMode;
use crate::dynamics::{ArrivalProcess, ChannelProcess};
use crate::env::{EnvConfig, HardCap, ObservabilityMask, UserSpec};
use crate::error::{Error, Result};
use crate::multihop::{FlowSpec, HopSpec, MultihopMask, NodeBudget, TopologyConfig};
use crate::service::ServiceModel;
use crate::trace::{read_trace, TraceTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalSource {
    Bernoulli { p: f64 },
    Binomial { trials: u32, p: f64 },
    BinomialMean { trials: u32, mean: f64 },
    Poisson { mean: f64, cap: u32 },
    Categorical { probs: Vec<f64> },
    TraceFile { path: PathBuf, user: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSource {
    Constant { level: f64 },
    Iid { levels: Vec<f64>, probs: Vec<f64> },
    Sticky { levels: Vec<f64>, mean: f64, stay: f64 },
    Markov { levels: Vec<f64>, transition: Vec<Vec<f64>>, initial: Vec<f64> },
    TraceFile { path: PathBuf, user: usize, levels: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub deadline: usize,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "one")]
    pub distance: f64,
    pub arrivals: ArrivalSource,
    pub channel: ChannelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopConfig {
    #[serde(default = "one")]
    pub distance: f64,
    pub channel: ChannelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub path: Vec<usize>,
    pub deadline: usize,
    #[serde(default = "one")]
    pub weight: f64,
    pub arrivals: ArrivalSource,
    pub hops: Vec<HopConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSection {
    SingleHop {
        e_max: f64,
        #[serde(default)]
        service: ServiceModel,
        #[serde(default)]
        mask: ObservabilityMask,
        /// Train on per-user sub-problems.
        #[serde(default)]
        decompose: bool,
        users: Vec<UserConfig>,
    },
    Multihop {
        e_max: f64,
        #[serde(default)]
        service: ServiceModel,
        #[serde(default)]
        mask: MultihopMask,
        #[serde(default)]
        nodes: Vec<usize>,
        #[serde(default)]
        edges: Vec<(usize, usize)>,
        budgets: Vec<NodeBudget>,
        flows: Vec<FlowConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Rsd4,
    /// Softmax off (`β = 0`, one sample).
    Td3,
    /// No recurrent branch.
    Sd3,
    Edf,
    Uniform,
    Static,
    Dp,
    Zero,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Rsd4 => "rsd4",
            AlgorithmKind::Td3 => "td3",
            AlgorithmKind::Sd3 => "sd3",
            AlgorithmKind::Edf => "edf",
            AlgorithmKind::Uniform => "uniform",
            AlgorithmKind::Static => "static",
            AlgorithmKind::Dp => "dp",
            AlgorithmKind::Zero => "zero",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, AlgorithmKind::Rsd4 | AlgorithmKind::Td3 | AlgorithmKind::Sd3)
    }

    /// Budgeted per-slot heuristics.
    pub fn is_heuristic(self) -> bool {
        matches!(self, AlgorithmKind::Edf | AlgorithmKind::Uniform | AlgorithmKind::Static)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(default = "DpSection::default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "DpSection::default_cap")]
    pub state_cap: u64,
}

impl DpSection {
    fn default_levels() -> usize {
        5
    }
    fn default_cap() -> u64 {
        50_000
    }
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection {
            levels: Self::default_levels(),
            grid: None,
            state_cap: Self::default_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub kind: AlgorithmKind,
    #[serde(default)]
    pub edf_mode: EdfMode,
    /// Per-slot projection applied to learned allocations.
    #[serde(default)]
    pub hard_cap: HardCap,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub dp: DpSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualSection {
    /// Budget cells `E_0`.
    pub budgets: Vec<f64>,
    /// Fixed-multiplier cells.
    pub lambdas: Vec<f64>,
    pub lambda0: f64,
    pub alpha0: f64,
    pub delta: f64,
    pub max_iterations: usize,
    pub feasibility: f64,
    /// Keep the agent across multiplier iterations (replay flushed).
    pub warm_start: bool,
    /// Slots used to measure `E_π` per iteration.
    pub eval_slots: usize,
}

impl Default for DualSection {
    fn default() -> Self {
        DualSection {
            budgets: Vec::new(),
            lambdas: Vec::new(),
            lambda0: 0.0,
            alpha0: 0.1,
            delta: 1e-3,
            max_iterations: 30,
            feasibility: 0.0,
            warm_start: false,
            eval_slots: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub slots: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: vec![0],
            slots: 5000,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub dual: DualSection,
    #[serde(default)]
    pub run: RunSection,
    /// Directory trace paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A concrete environment description ready to instantiate.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedEnv {
    SingleHop { config: EnvConfig, decompose: bool },
    Multihop(TopologyConfig),
}

#[derive(Default)]
struct TraceCache(HashMap<PathBuf, TraceTable>);

impl TraceCache {
    fn get(&mut self, base: &Path, path: &Path) -> Result<&TraceTable> {
        let full = base.join(path);
        if !self.0.contains_key(&full) {
            let t = read_trace(&full)?;
            self.0.insert(full.clone(), t);
        }
        Ok(&self.0[&full])
    }
}

fn user_index(user: usize) -> Result<usize> {
    user.checked_sub(1)
        .ok_or_else(|| Error::Config("trace users are numbered from 1".into()))
}

impl ArrivalSource {
    fn resolve(&self, base: &Path, cache: &mut TraceCache) -> Result<ArrivalProcess> {
        let p = match self {
            ArrivalSource::Bernoulli { p } => ArrivalProcess::Bernoulli { p: *p },
            ArrivalSource::Binomial { trials, p } => ArrivalProcess::Binomial { trials: *trials, p: *p },
            ArrivalSource::BinomialMean { trials, mean } => ArrivalProcess::binomial_with_mean(*mean, *trials)?,
            ArrivalSource::Poisson { mean, cap } => ArrivalProcess::Poisson { mean: *mean, cap: *cap },
            ArrivalSource::Categorical { probs } => ArrivalProcess::Categorical { probs: probs.clone() },
            ArrivalSource::TraceFile { path, user } => cache.get(base, path)?.arrivals(user_index(*user)?)?,
        };
        p.validate()?;
        Ok(p)
    }
}

impl ChannelSource {
    fn resolve(&self, base: &Path, cache: &mut TraceCache) -> Result<ChannelProcess> {
        let c = match self {
            ChannelSource::Constant { level } => ChannelProcess::constant(*level),
            ChannelSource::Iid { levels, probs } => ChannelProcess::iid(levels.clone(), probs.clone()),
            ChannelSource::Sticky { levels, mean, stay } => ChannelProcess::sticky_with_mean(levels.clone(), *mean, *stay)?,
            ChannelSource::Markov {
                levels,
                transition,
                initial,
            } => ChannelProcess::Markov {
                levels: levels.clone(),
                transition: transition.clone(),
                initial: initial.clone(),
            },
            ChannelSource::TraceFile { path, user, levels } => cache.get(base, path)?.channel(user_index(*user)?, levels)?,
        };
        c.validate()?;
        Ok(c)
    }
}

impl ExperimentConfig {
    /// Parses TOML; syntax and type errors report line and column.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        let kind = self.algorithm.kind;
        let d = &self.dual;
        if d.budgets.is_empty() && d.lambdas.is_empty() {
            return Err(Error::Config("dual: give at least one of budgets or lambdas".into()));
        }
        if d.budgets.iter().chain(&d.lambdas).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("dual: budgets and lambdas must be >= 0".into()));
        }
        if kind.is_heuristic() && !d.lambdas.is_empty() {
            return Err(Error::Config(format!(
                "algorithm {} is budgeted; use dual.budgets, not dual.lambdas",
                kind.name()
            )));
        }
        if let EnvironmentSection::Multihop { .. } = self.environment {
            if !(kind.is_learning() || kind == AlgorithmKind::Zero) {
                return Err(Error::Config(format!(
                    "algorithm {} is single-hop only",
                    kind.name()
                )));
            }
        }
        if kind.is_learning() {
            self.algorithm.agent.validate()?;
        }
        Ok(())
    }

    /// Environment with trace files loaded and the given seed.
    pub fn resolve_environment(&self, seed: u64) -> Result<ResolvedEnv> {
        let mut cache = TraceCache::default();
        let base = &self.base_dir;
        match &self.environment {
            EnvironmentSection::SingleHop {
                e_max,
                service,
                mask,
                decompose,
                users,
            } => {
                let users = users
                    .iter()
                    .map(|u| {
                        Ok(UserSpec {
                            deadline: u.deadline,
                            weight: u.weight,
                            distance: u.distance,
                            arrivals: u.arrivals.resolve(base, &mut cache)?,
                            channel: u.channel.resolve(base, &mut cache)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let config = EnvConfig {
                    users,
                    e_max: *e_max,
                    service: *service,
                    mask: mask.clone(),
                    seed,
                };
                config.validate()?;
                Ok(ResolvedEnv::SingleHop {
                    config,
                    decompose: *decompose,
                })
            }
            EnvironmentSection::Multihop {
                e_max,
                service,
                mask,
                nodes,
                edges,
                budgets,
                flows,
            } => {
                let flows = flows
                    .iter()
                    .map(|f| {
                        Ok(FlowSpec {
                            path: f.path.clone(),
                            deadline: f.deadline,
                            weight: f.weight,
                            arrivals: f.arrivals.resolve(base, &mut cache)?,
                            hops: f
                                .hops
                                .iter()
                                .map(|h| {
                                    Ok(HopSpec {
                                        distance: h.distance,
                                        channel: h.channel.resolve(base, &mut cache)?,
                                    })
                                })
                                .collect::<Result<Vec<_>>>()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let topo = TopologyConfig {
                    nodes: nodes.clone(),
                    edges: edges.clone(),
                    flows,
                    budgets: budgets.clone(),
                    e_max: *e_max,
                    service: *service,
                    mask: *mask,
                    seed,
                };
                topo.validate()?;
                Ok(ResolvedEnv::Multihop(topo))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[environment]
kind = "single_hop"
e_max = 2.0

[[environment.users]]
deadline = 2
arrivals = { kind = "bernoulli", p = 0.5 }
channel = { kind = "constant", level = 1.0 }

[algorithm]
kind = "uniform"

[dual]
budgets = [0.0, 1.0]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(cfg.run.seeds, vec![0]);
        assert_eq!(cfg.run.slots, 5000);
        let ResolvedEnv::SingleHop { config, .. } = cfg.resolve_environment(7).unwrap() else {
            panic!("single hop expected");
        };
        assert_eq!(config.seed, 7);
        assert_eq!(config.users[0].weight, 1.0);
    }

    #[test]
    fn errors_report_lines() {
        let bad = MINIMAL.replace("deadline = 2", "deadline = \"two\"");
        let err = ExperimentConfig::from_toml_str(&bad, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_errors() {
        let no_cells = MINIMAL.replace("budgets = [0.0, 1.0]", "");
        assert!(ExperimentConfig::from_toml_str(&no_cells, Path::new(".")).is_err());
        let lambdas = MINIMAL.replace("budgets = [0.0, 1.0]", "lambdas = [0.1]");
        assert!(ExperimentConfig::from_toml_str(&lambdas, Path::new(".")).is_err());
    }

    #[test]
    fn missing_trace_names_path() {
        let t = MINIMAL.replace(
            r#"arrivals = { kind = "bernoulli", p = 0.5 }"#,
            r#"arrivals = { kind = "trace_file", path = "nope.csv", user = 1 }"#,
        );
        let cfg = ExperimentConfig::from_toml_str(&t, Path::new("/tmp/rsd4-missing")).unwrap();
        let err = cfg.resolve_environment(0).unwrap_err().to_string();
        assert!(err.contains("nope.csv"), "{err}");
    }
}
