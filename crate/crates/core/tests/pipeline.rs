use std::fs;

use rsd4_core::config::ExperimentConfig;
use rsd4_core::harness::run_experiment;
use rsd4_core::trace::write_trace;

const CONFIG: &str = r#"
[environment]
kind = "single_hop"
e_max = 2.0

[[environment.users]]
deadline = 2

[environment.users.arrivals]
kind = "trace_file"
path = "arrivals.csv"
user = 1

[environment.users.channel]
kind = "trace_file"
path = "channels.csv"
user = 1
levels = [1.0, 3.0]

[algorithm]
kind = "uniform"

[dual]
budgets = [1.0]
lambdas = []
lambda0 = 0.0
alpha0 = 0.1
delta = 0.001
max_iterations = 10
feasibility = 0.0
warm_start = false
eval_slots = 100

[run]
seeds = [0, 1]
slots = 40
"#;

#[test]
fn trace_driven_config_runs_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let arrivals: Vec<u64> = (0..40).map(|t| (t % 3 == 0) as u64).collect();
    let channels: Vec<u64> = (0..40).map(|t| (t % 2) as u64).collect();
    write_trace(fs::File::create(dir.path().join("arrivals.csv")).unwrap(), &[arrivals]).unwrap();
    write_trace(fs::File::create(dir.path().join("channels.csv")).unwrap(), &[channels]).unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, CONFIG).unwrap();

    let cfg = ExperimentConfig::load(&path).unwrap();
    let out = dir.path().join("out");
    let summary = run_experiment(&cfg, &out).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].seeds, 2);
    assert!(summary.rows[0].resource.mean <= 1.0 + 1e-12);

    // Fourteen jobs arrive; a job can be served at most once.
    let series = fs::read_to_string(out.join("uniform_e0-1_s0.csv")).unwrap();
    let served: f64 = series.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!(served <= 14.0);

    let again = dir.path().join("again");
    run_experiment(&cfg, &again).unwrap();
    assert_eq!(series, fs::read_to_string(again.join("uniform_e0-1_s0.csv")).unwrap());
}

#[test]
fn missing_trace_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, CONFIG).unwrap();
    let err = ExperimentConfig::load(&path)
        .and_then(|cfg| run_experiment(&cfg, &dir.path().join("out")))
        .unwrap_err();
    assert!(err.to_string().contains("arrivals.csv"), "{err}");
}
