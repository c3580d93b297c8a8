//! Browser bindings. Each export has a plain Rust counterpart so the logic
//! also runs and is tested natively.

use wasm_bindgen::prelude::*;

use rsd4_core::config::{AlgorithmKind, ExperimentConfig};
use rsd4_core::harness::{run_cell, Cell, Target};
use rsd4_core::presets;
use rsd4_core::success_probability;

/// Baselines offered by the comparison table.
pub const BASELINES: [AlgorithmKind; 4] =
    [AlgorithmKind::Zero, AlgorithmKind::Edf, AlgorithmKind::Uniform, AlgorithmKind::Static];

/// Success probability at `points` evenly spaced resource levels in `[0, e_max]`.
pub fn curve(c: f64, f: f64, e_max: f64, points: usize) -> Result<Vec<f64>, String> {
    let n = points.max(2);
    (0..n)
        .map(|k| {
            let e = e_max * k as f64 / (n - 1) as f64;
            success_probability(e, c, f).map_err(|e| e.to_string())
        })
        .collect()
}

fn table1(budget: f64, slots: usize) -> ExperimentConfig {
    let mut cfg = presets::table1_preset();
    cfg.run.slots = slots.max(1);
    cfg.dual.budgets = vec![budget];
    cfg
}

fn run(kind: AlgorithmKind, budget: f64, slots: usize, seed: u64) -> Result<Vec<rsd4_core::policy::SlotRecord>, String> {
    let cfg = table1(budget, slots);
    let cell = Cell {
        algorithm: kind,
        target: Target::Budget(budget),
        seed,
    };
    run_cell(&cfg, cell).map(|r| r.records).map_err(|e| e.to_string())
}

/// Average throughput and resource of each baseline on the four-user preset,
/// as CSV `algorithm,throughput,resource`.
pub fn compare(budget: f64, slots: usize, seed: u64) -> Result<String, String> {
    let mut out = String::from("algorithm,throughput,resource\n");
    for kind in BASELINES {
        let (d, e, _) = rsd4_core::policy::averages(&run(kind, budget, slots, seed)?);
        out.push_str(&format!("{},{d:.4},{e:.4}\n", kind.name()));
    }
    Ok(out)
}

/// Running average throughput of one baseline, one value per slot.
pub fn running_throughput(algorithm: &str, budget: f64, slots: usize, seed: u64) -> Result<Vec<f64>, String> {
    let kind = BASELINES
        .into_iter()
        .find(|k| k.name() == algorithm)
        .ok_or_else(|| format!("unknown algorithm {algorithm:?}"))?;
    let mut sum = 0.0;
    Ok(run(kind, budget, slots, seed)?
        .iter()
        .enumerate()
        .map(|(t, r)| {
            sum += r.throughput;
            sum / (t + 1) as f64
        })
        .collect())
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen]
pub fn success_curve(c: f64, f: f64, e_max: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    curve(c, f, e_max, points).map_err(js)
}

#[wasm_bindgen]
pub fn compare_policies(budget: f64, slots: usize, seed: u64) -> Result<String, JsValue> {
    compare(budget, slots, seed).map_err(js)
}

#[wasm_bindgen]
pub fn simulate_policy(algorithm: &str, budget: f64, slots: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    running_throughput(algorithm, budget, slots, seed).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_starts_at_zero_and_rises() {
        let p = curve(1.8, 1.0, 2.0, 21).unwrap();
        assert_eq!(p.len(), 21);
        assert_eq!(p[0], 0.0);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        assert!(curve(0.0, 1.0, 2.0, 5).is_err());
    }

    #[test]
    fn compare_lists_every_baseline() {
        let csv = compare(10.0, 300, 1).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), BASELINES.len());
        assert!(rows[0].starts_with("zero,0.0000,0.0000"));
    }

    #[test]
    fn running_average_ends_at_cell_average() {
        let avg = running_throughput("edf", 10.0, 200, 2).unwrap();
        assert_eq!(avg.len(), 200);
        let (d, _, _) = rsd4_core::policy::averages(&run(AlgorithmKind::Edf, 10.0, 200, 2).unwrap());
        assert!((avg[199] - d).abs() < 1e-12);
        assert!(running_throughput("dqn", 10.0, 10, 0).is_err());
    }
}
