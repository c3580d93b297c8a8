//! Per-slot static allocation: maximize expected weighted service of the
//! jobs currently buffered, subject to spending at most the budget this slot.
//!
//! ```text
//! max  Σ_i β_i Σ_τ B_i^τ P̄_i(e_i^τ)   s.t.  Σ_i e_i·B_i ≤ E_0,  0 ≤ e ≤ e_max
//! ```
//!
//! `P̄_i` is the success law averaged over the belief on user `i`'s channel
//! (a point mass when the channel is observed). It is concave, so the problem
//! separates under a budget multiplier `μ`: every job of user `i` gets the
//! `e` maximizing `β_i P̄_i(e) − μe`, found by bisection on the decreasing
//! marginal, and `μ` itself is bisected until the budget is met.

use crate::dynamics::ChannelProcess;
use crate::env::{Allocation, BufferState};
use crate::error::{Error, Result};
use crate::service::ServiceModel;

/// Distribution over a user's channel level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBelief {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ChannelBelief {
    pub fn known(level: f64) -> Self {
        ChannelBelief {
            levels: vec![level],
            probs: vec![1.0],
        }
    }

    /// Stationary law of a channel process, for when the channel is hidden.
    pub fn stationary(channel: &ChannelProcess) -> Self {
        ChannelBelief {
            levels: channel.levels().to_vec(),
            probs: channel.stationary(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticProblem {
    pub buffers: BufferState,
    pub channels: Vec<ChannelBelief>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub budget: f64,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticSolution {
    pub allocation: Allocation,
    pub objective: f64,
    /// Budget multiplier at the solution.
    pub multiplier: f64,
    /// Lagrangian upper bound on the optimum at `multiplier`.
    pub dual_bound: f64,
}

struct UserLaw {
    weight: f64,
    /// `(probability, f^3 c)` pairs.
    terms: Vec<(f64, f64)>,
}

impl UserLaw {
    fn value(&self, e: f64) -> f64 {
        self.weight * self.terms.iter().map(|(p, k)| p * (e / k).tanh()).sum::<f64>()
    }

    fn marginal(&self, e: f64) -> f64 {
        self.weight
            * self
                .terms
                .iter()
                .map(|(p, k)| {
                    let s = 1.0 / (e / k).cosh();
                    p * s * s / k
                })
                .sum::<f64>()
    }

    /// argmax over [0, e_max] of `value(e) − μ e`.
    fn best_response(&self, mu: f64, e_max: f64) -> f64 {
        if self.marginal(0.0) <= mu {
            return 0.0;
        }
        if self.marginal(e_max) >= mu {
            return e_max;
        }
        let (mut lo, mut hi) = (0.0, e_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal(mid) > mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn static_program(p: &StaticProblem) -> Result<StaticSolution> {
    static_program_with(p, ServiceModel::Logistic)
}

pub fn static_program_with(p: &StaticProblem, service: ServiceModel) -> Result<StaticSolution> {
    if !service.is_concave() {
        return Err(Error::Domain(
            "static program needs a concave service law".into(),
        ));
    }
    if !(p.budget.is_finite() && p.budget >= 0.0) {
        return Err(Error::Domain(format!("budget {} must be >= 0", p.budget)));
    }
    let n = p.buffers.num_users();
    if p.channels.len() != n || p.weights.len() != n || p.distances.len() != n {
        return Err(Error::Shape("static problem vectors disagree on user count".into()));
    }
    let laws: Vec<UserLaw> = (0..n)
        .map(|i| UserLaw {
            weight: p.weights[i],
            terms: p.channels[i]
                .probs
                .iter()
                .zip(&p.channels[i].levels)
                .map(|(&pr, &c)| (pr, p.distances[i].powi(3) * c))
                .collect(),
        })
        .collect();
    let jobs: Vec<f64> = p
        .buffers
        .0
        .iter()
        .map(|q| q[1..].iter().map(|&x| f64::from(x)).sum())
        .collect();

    let spend = |mu: f64| -> (Vec<f64>, f64) {
        let e: Vec<f64> = laws.iter().map(|l| l.best_response(mu, p.e_max)).collect();
        let total = e.iter().zip(&jobs).map(|(e, n)| e * n).sum();
        (e, total)
    };

    let total_jobs: f64 = jobs.iter().sum();
    let (per_user, mu) = if total_jobs == 0.0 || p.budget == 0.0 {
        (vec![0.0; n], f64::INFINITY)
    } else {
        let (e0, t0) = spend(0.0);
        if t0 <= p.budget {
            (e0, 0.0)
        } else {
            let mut lo = 0.0;
            let mut hi = laws
                .iter()
                .zip(&jobs)
                .filter(|(_, &n)| n > 0.0)
                .map(|(l, _)| l.marginal(0.0))
                .fold(0.0, f64::max);
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let (_, t) = spend(mid);
                if t > p.budget {
                    lo = mid;
                } else {
                    hi = mid;
                    if p.budget - t <= 1e-8 * p.budget {
                        break;
                    }
                }
            }
            (spend(hi).0, hi)
        }
    };

    let mut allocation = Allocation::zeros(&p.buffers.deadlines());
    for (i, row) in allocation.0.iter_mut().enumerate() {
        for (t, e) in row.iter_mut().enumerate().skip(1) {
            if p.buffers.0[i][t] > 0 {
                *e = per_user[i];
            }
        }
    }
    let objective = laws
        .iter()
        .zip(&jobs)
        .zip(&per_user)
        .map(|((l, n), e)| n * l.value(*e))
        .sum();
    let dual_bound = if mu.is_finite() {
        laws.iter()
            .zip(&jobs)
            .map(|(l, n)| {
                let e = l.best_response(mu, p.e_max);
                n * (l.value(e) - mu * e)
            })
            .sum::<f64>()
            + mu * p.budget
    } else {
        0.0
    };
    Ok(StaticSolution {
        allocation,
        objective,
        multiplier: if mu.is_finite() { mu } else { 0.0 },
        dual_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(buffers: Vec<Vec<u32>>, levels: Vec<f64>, budget: f64, e_max: f64) -> StaticProblem {
        let n = buffers.len();
        StaticProblem {
            buffers: BufferState(buffers),
            channels: levels.into_iter().map(ChannelBelief::known).collect(),
            weights: vec![1.0; n],
            distances: vec![1.0; n],
            budget,
            e_max,
        }
    }

    #[test]
    fn zero_budget_spends_nothing() {
        let s = static_program(&problem(vec![vec![0, 2]], vec![1.0], 0.0, 5.0)).unwrap();
        assert_eq!(s.objective, 0.0);
        assert!(s.allocation.flatten().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn slack_budget_saturates() {
        let s = static_program(&problem(vec![vec![0, 1]], vec![1.0], 7.0, 5.0)).unwrap();
        assert_eq!(s.allocation.0[0][1], 5.0);
    }

    #[test]
    fn two_users_match_grid_search() {
        let p = problem(vec![vec![0, 1], vec![0, 1]], vec![1.0, 2.0], 2.0, 2.0);
        let s = static_program(&p).unwrap();
        let mut best = 0.0f64;
        for a in 0..=200 {
            for b in 0..=200 {
                let (e1, e2) = (a as f64 * 0.01, b as f64 * 0.01);
                if e1 + e2 <= 2.0 + 1e-12 {
                    best = best.max(e1.tanh() + (e2 / 2.0).tanh());
                }
            }
        }
        assert!(s.objective >= best - 1e-4, "{} vs {}", s.objective, best);
        assert!((s.objective - best).abs() < 1e-4);
        assert!(s.dual_bound - s.objective < 1e-6);
    }

    #[test]
    fn threshold_model_rejected() {
        let p = problem(vec![vec![0, 1]], vec![1.0], 1.0, 1.0);
        assert!(static_program_with(&p, ServiceModel::Threshold { level: 1.0 }).is_err());
    }
}
