//! `rsd4`: run scheduling experiments from a TOML config or a preset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsd4_core::autodiff::Checkpoint;
use rsd4_core::config::ExperimentConfig;
use rsd4_core::harness::{self, Summary};
use rsd4_core::presets::{self, PRESET_NAMES};
use rsd4_core::trace::{read_trace, synthetic_arrivals, synthetic_channel, write_trace};
use rsd4_core::{Error, ResolvedEnv, Result};

#[derive(Parser)]
#[command(name = "rsd4", version, about = "Delay-constrained multi-user scheduling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's run.output, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a non-learning policy (edf, uniform, static, dp, zero) over all cells.
    Simulate(Common),
    /// Train a learning agent (rsd4, td3, sd3) over all cells.
    Train(Common),
    /// Run only the budget cells, enforcing each budget with the dual loop.
    Dual(Common),
    /// Roll out a saved agent checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train` or `dual`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Slots to roll out (default: the config's run.slots).
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Solve a small single-hop config exactly and dump its policy table.
    DpOracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
    },
    /// List presets, or print / write one as TOML.
    Presets {
        name: Option<String>,
        /// Write `<name>.toml` into this directory instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a trace CSV, or write synthetic traces for a config.
    Trace {
        /// Trace file to summarize.
        path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Write `arrivals.csv` and `channels.csv` with this many slots.
        #[arg(long)]
        synth: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => presets::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}; try one of {}", PRESET_NAMES.join(", "))))?,
        (None, None) => return Err(Error::Config("give --config <path> or --preset <name>".into())),
    };
    if let Some(seed) = common.seed {
        cfg.run.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.run.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_summary(summary: &Summary, dir: &Path) {
    print!("{}", summary.to_csv());
    eprintln!("wrote {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            if cfg.algorithm.kind.is_learning() {
                return Err(Error::Config(format!(
                    "algorithm {} learns; use `rsd4 train`",
                    cfg.algorithm.kind.name()
                )));
            }
            let dir = out_dir(&common, &cfg);
            print_summary(&harness::run_experiment(&cfg, &dir)?, &dir);
        }
        Command::Train(common) => {
            let cfg = load(&common)?;
            if !cfg.algorithm.kind.is_learning() {
                return Err(Error::Config(format!(
                    "algorithm {} does not learn; use `rsd4 simulate`",
                    cfg.algorithm.kind.name()
                )));
            }
            let dir = out_dir(&common, &cfg);
            print_summary(&harness::run_experiment(&cfg, &dir)?, &dir);
        }
        Command::Dual(common) => {
            let mut cfg = load(&common)?;
            if cfg.dual.budgets.is_empty() {
                return Err(Error::Config("dual needs at least one entry in dual.budgets".into()));
            }
            cfg.dual.lambdas.clear();
            let dir = out_dir(&common, &cfg);
            print_summary(&harness::run_experiment(&cfg, &dir)?, &dir);
        }
        Command::Evaluate {
            common,
            checkpoint,
            lambda,
            slots,
        } => {
            let cfg = load(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let seed = cfg.run.seeds[0];
            let records = harness::evaluate_checkpoint(&cfg, ck, seed, lambda, slots.unwrap_or(cfg.run.slots))?;
            let dir = out_dir(&common, &cfg);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("evaluate_s{seed}.csv"));
            fs::write(&path, harness::series_csv(&records, lambda)).map_err(|e| Error::io(&path, e))?;
            let (d, e, r) = rsd4_core::policy::averages(&records);
            println!("throughput,resource,reward\n{d},{e},{r}");
            eprintln!("wrote {}", path.display());
        }
        Command::DpOracle { common, lambda } => {
            let cfg = load(&common)?;
            let seed = cfg.run.seeds[0];
            let sol = harness::dp_oracle(&cfg, seed, lambda)?;
            let m = sol.stationary_metrics();
            let dir = out_dir(&common, &cfg);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("dp_lambda-{lambda}.csv"));
            fs::write(&path, sol.to_csv()).map_err(|e| Error::io(&path, e))?;
            println!("lambda,gain,throughput,resource,states,iterations");
            println!(
                "{lambda},{},{},{},{},{}",
                sol.gain,
                m.throughput,
                m.resource,
                sol.model().num_states(),
                sol.iterations
            );
            eprintln!("wrote {}", path.display());
        }
        Command::Presets { name, out } => match name {
            None => {
                for n in PRESET_NAMES {
                    println!("{n}");
                }
            }
            Some(name) => {
                let cfg = presets::preset(&name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
                let text = cfg.to_toml()?;
                match out {
                    None => print!("{text}"),
                    Some(dir) => {
                        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                        let path = dir.join(format!("{name}.toml"));
                        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                        eprintln!("wrote {}", path.display());
                    }
                }
            }
        },
        Command::Trace { path, common, synth } => match (path, synth) {
            (Some(path), None) => {
                let table = read_trace(&path)?;
                println!("user,slots,mean");
                for s in table.summary() {
                    println!("{},{},{}", s.user, s.slots, s.mean);
                }
            }
            (None, Some(slots)) => {
                let cfg = load(&common)?;
                let seed = cfg.run.seeds[0];
                let ResolvedEnv::SingleHop { config: env, .. } = cfg.resolve_environment(seed)? else {
                    return Err(Error::Config("synthetic traces need a single-hop environment".into()));
                };
                let arrivals: Vec<Vec<u64>> = env
                    .users
                    .iter()
                    .enumerate()
                    .map(|(i, u)| synthetic_arrivals(&u.arrivals, slots, seed.wrapping_add(2 * i as u64)))
                    .collect();
                let channels: Vec<Vec<u64>> = env
                    .users
                    .iter()
                    .enumerate()
                    .map(|(i, u)| synthetic_channel(&u.channel, slots, seed.wrapping_add(2 * i as u64 + 1)))
                    .collect();
                let dir = out_dir(&common, &cfg);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, series) in [("arrivals.csv", &arrivals), ("channels.csv", &channels)] {
                    let p = dir.join(name);
                    let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    write_trace(f, series)?;
                    eprintln!("wrote {}", p.display());
                }
            }
            _ => return Err(Error::Config("give a trace path or --synth <slots>, not both".into())),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
