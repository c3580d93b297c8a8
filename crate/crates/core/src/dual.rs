//! Lagrangian outer loop.
//!
//! An inner solver maximizes `D − λE` at a fixed multiplier and reports the
//! average resource `E_π` of its policy; the multiplier then moves along the
//! dual gradient `E_π − E_0` and is projected onto `λ ≥ 0`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{DpModel, DpSolution};
use crate::error::{Error, Result};

/// One outer iteration as recorded in the history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualRecord {
    pub k: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub resource: f64,
    pub throughput: f64,
}

/// `true` unless `a, b, c` is monotone (either direction).
pub fn is_flip(a: f64, b: f64, c: f64) -> bool {
    !((a <= b && b <= c) || (a >= b && b >= c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    pub history: Vec<DualRecord>,
    pub halvings: usize,
    /// Multiplier iterates so far, oldest first.
    trajectory: Vec<f64>,
}

impl DualState {
    pub fn new(lambda: f64, alpha: f64, delta: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Domain(format!("initial multiplier {lambda} must be >= 0")));
        }
        if !(alpha.is_finite() && alpha > 0.0 && delta.is_finite() && delta > 0.0) {
            return Err(Error::Domain("step size and precision must be positive".into()));
        }
        Ok(DualState {
            lambda,
            alpha,
            delta,
            history: Vec::new(),
            halvings: 0,
            trajectory: vec![lambda],
        })
    }

    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    /// Projected gradient step from a measured average resource. Returns
    /// `true` once the multiplier moved by at most `delta`.
    ///
    /// The step size halves whenever the last three iterates are not
    /// monotone; the window slides, so consecutive flips halve repeatedly.
    pub fn dual_update(&mut self, e_pi: f64, e0: f64) -> Result<bool> {
        if !e_pi.is_finite() || e_pi < 0.0 {
            return Err(Error::NonFinite(format!(
                "measured resource {e_pi} at lambda {} (iteration {})",
                self.lambda,
                self.trajectory.len() - 1
            )));
        }
        let next = (self.lambda + self.alpha * (e_pi - e0)).max(0.0);
        let moved = (next - self.lambda).abs();
        self.trajectory.push(next);
        if let [.., a, b, c] = self.trajectory[..] {
            if is_flip(a, b, c) {
                self.alpha *= 0.5;
                self.halvings += 1;
            }
        }
        self.lambda = next;
        Ok(moved <= self.delta)
    }

    /// History as CSV with columns `k,lambda,alpha,resource,throughput`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("k,lambda,alpha,resource,throughput\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{},{},{}", r.k, r.lambda, r.alpha, r.resource, r.throughput);
        }
        out
    }
}

/// Long-run averages of a policy at some multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub resource: f64,
    pub throughput: f64,
}

/// Produces a policy for a fixed multiplier and measures it.
pub trait InnerSolver {
    type Policy;
    fn solve(&mut self, lambda: f64) -> Result<(Self::Policy, Evaluation)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub lambda0: f64,
    pub alpha0: f64,
    pub delta: f64,
    pub max_iterations: usize,
    /// Relative slack under which an iterate counts as feasible.
    pub feasibility: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            lambda0: 0.0,
            alpha0: 0.1,
            delta: 1e-4,
            max_iterations: 200,
            feasibility: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution<P> {
    pub policy: P,
    /// Multiplier the returned policy was solved at.
    pub lambda: f64,
    pub evaluation: Evaluation,
    pub converged: bool,
    pub state: DualState,
}

/// Runs the outer loop until the multiplier settles or the iteration cap
/// is hit.
///
/// Returns the feasible iterate with the highest throughput if any iterate
/// met `E_π ≤ E_0(1 + feasibility)`, otherwise the last one.
pub fn solve_constrained<S: InnerSolver>(
    inner: &mut S,
    e0: f64,
    config: &DualConfig,
) -> Result<ConstrainedSolution<S::Policy>> {
    if !(e0.is_finite() && e0 >= 0.0) {
        return Err(Error::Domain(format!("budget {e0} must be >= 0")));
    }
    let mut state = DualState::new(config.lambda0, config.alpha0, config.delta)?;
    let limit = e0 * (1.0 + config.feasibility) + 1e-12;
    let mut best: Option<(S::Policy, f64, Evaluation)> = None;
    let mut last: Option<(S::Policy, f64, Evaluation)> = None;
    let mut converged = false;
    for k in 0..config.max_iterations.max(1) {
        let lambda = state.lambda;
        let (policy, eval) = inner.solve(lambda)?;
        state.history.push(DualRecord {
            k,
            lambda,
            alpha: state.alpha,
            resource: eval.resource,
            throughput: eval.throughput,
        });
        let done = state.dual_update(eval.resource, e0)?;
        if eval.resource <= limit && best.as_ref().is_none_or(|(_, _, b)| eval.throughput >= b.throughput) {
            best = Some((policy, lambda, eval));
        } else {
            last = Some((policy, lambda, eval));
        }
        if done {
            converged = true;
            break;
        }
    }
    let (policy, lambda, evaluation) = best.or(last).expect("at least one iteration ran");
    Ok(ConstrainedSolution {
        policy,
        lambda,
        evaluation,
        converged,
        state,
    })
}

/// Exact inner solver on a finite model.
#[derive(Debug, Clone)]
pub struct DpInner {
    pub model: Arc<DpModel>,
}

impl InnerSolver for DpInner {
    type Policy = DpSolution;

    fn solve(&mut self, lambda: f64) -> Result<(DpSolution, Evaluation)> {
        let sol = self.model.solve(lambda)?;
        let m = sol.stationary_metrics();
        Ok((
            sol,
            Evaluation {
                resource: m.resource,
                throughput: m.throughput,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stationary_point() {
        let mut s = DualState::new(0.4, 0.1, 1e-6).unwrap();
        assert!(s.dual_update(5.0, 5.0).unwrap());
        assert_eq!(s.lambda, 0.4);
    }

    #[test]
    fn projection_at_zero() {
        let mut s = DualState::new(0.0, 0.1, 1e-6).unwrap();
        s.dual_update(1.0, 5.0).unwrap();
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn flip_rule_examples() {
        assert!(!is_flip(0.2, 0.3, 0.4));
        assert!(is_flip(0.2, 0.4, 0.3));

        // 0.2 -> 0.3 -> 0.4: monotone, alpha kept.
        let mut s = DualState::new(0.2, 0.1, 1e-9).unwrap();
        s.dual_update(1.0, 0.0).unwrap();
        s.dual_update(1.0, 0.0).unwrap();
        assert_eq!(s.alpha, 0.1);
        assert_eq!(s.halvings, 0);

        // 0.2 -> 0.4 -> 0.3: flip, alpha halved.
        let mut s = DualState::new(0.2, 0.1, 1e-9).unwrap();
        s.dual_update(2.0, 0.0).unwrap();
        s.dual_update(0.0, 1.0).unwrap();
        assert!((s.lambda - 0.3).abs() < 1e-12);
        assert_eq!(s.alpha, 0.05);
    }

    #[test]
    fn non_finite_resource_aborts() {
        let mut s = DualState::new(0.2, 0.1, 1e-9).unwrap();
        assert!(matches!(s.dual_update(f64::NAN, 1.0), Err(Error::NonFinite(_))));
    }

    struct Linear;

    impl InnerSolver for Linear {
        type Policy = f64;
        fn solve(&mut self, lambda: f64) -> Result<(f64, Evaluation)> {
            // Spend 1/(1+λ) when the price is λ.
            let e = 1.0 / (1.0 + lambda);
            Ok((e, Evaluation { resource: e, throughput: e.sqrt() }))
        }
    }

    #[test]
    fn slack_budget_gives_zero_multiplier() {
        let sol = solve_constrained(&mut Linear, 10.0, &DualConfig::default()).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn tight_budget_converges_to_root() {
        let cfg = DualConfig {
            alpha0: 1.0,
            delta: 1e-7,
            max_iterations: 10_000,
            ..DualConfig::default()
        };
        let sol = solve_constrained(&mut Linear, 0.5, &cfg).unwrap();
        assert!(sol.converged);
        assert!((sol.state.lambda - 1.0).abs() < 1e-4);
        assert!((sol.evaluation.resource - 0.5).abs() < 1e-4);
        assert!(sol.state.history_csv().starts_with("k,lambda,alpha,resource,throughput\n"));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let cfg = DualConfig {
            alpha0: 1e-3,
            delta: 1e-12,
            max_iterations: 3,
            ..DualConfig::default()
        };
        let sol = solve_constrained(&mut Linear, 0.5, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.state.history.len(), 3);
    }

    proptest! {
        #[test]
        fn multiplier_nonnegative_and_alpha_nonincreasing(
            l0 in 0.0..5.0f64,
            a0 in 0.01..2.0f64,
            es in proptest::collection::vec(0.0..10.0f64, 1..40),
            e0 in 0.0..10.0f64,
        ) {
            let mut s = DualState::new(l0, a0, 1e-12).unwrap();
            let mut prev_alpha = s.alpha;
            for e in es {
                s.dual_update(e, e0).unwrap();
                prop_assert!(s.lambda >= 0.0);
                prop_assert!(s.alpha <= prev_alpha);
                prev_alpha = s.alpha;
            }
        }
    }
}
