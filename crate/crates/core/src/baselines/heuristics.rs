//! Earliest-deadline-first and uniform budget splitting.

use serde::{Deserialize, Serialize};

use crate::env::{Allocation, BufferState};

/// How EDF picks its "shortest deadline" jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdfMode {
    /// Only jobs at the smallest remaining time over all users.
    #[default]
    Global,
    /// Each user's smallest nonempty bucket.
    PerUser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedAllocation {
    pub allocation: Allocation,
    /// Part of the budget left unspent because of the per-job cap (or
    /// because there was nothing to serve).
    pub residue: f64,
}

fn split_equally(buffers: &BufferState, chosen: &[(usize, usize)], budget: f64, e_max: f64) -> BudgetedAllocation {
    let mut allocation = Allocation::zeros(&buffers.deadlines());
    let jobs: u64 = chosen.iter().map(|&(i, t)| u64::from(buffers.0[i][t])).sum();
    if jobs == 0 || budget <= 0.0 {
        return BudgetedAllocation {
            allocation,
            residue: budget.max(0.0),
        };
    }
    let per_job = (budget / jobs as f64).min(e_max);
    for &(i, t) in chosen {
        allocation.0[i][t] = per_job;
    }
    BudgetedAllocation {
        residue: (budget - per_job * jobs as f64).max(0.0),
        allocation,
    }
}

/// Splits `budget` equally over the jobs with the shortest remaining time.
pub fn edf(buffers: &BufferState, budget: f64, e_max: f64, mode: EdfMode) -> BudgetedAllocation {
    let first_nonempty = |q: &[u32]| (1..q.len()).find(|&t| q[t] > 0);
    let chosen: Vec<(usize, usize)> = match mode {
        EdfMode::PerUser => buffers
            .0
            .iter()
            .enumerate()
            .filter_map(|(i, q)| first_nonempty(q).map(|t| (i, t)))
            .collect(),
        EdfMode::Global => {
            let min = buffers.0.iter().filter_map(|q| first_nonempty(q)).min();
            match min {
                Some(t) => (0..buffers.num_users())
                    .filter(|&i| buffers.0[i].get(t).is_some_and(|&n| n > 0))
                    .map(|i| (i, t))
                    .collect(),
                None => Vec::new(),
            }
        }
    };
    split_equally(buffers, &chosen, budget, e_max)
}

/// Splits `budget` equally over every buffered job.
pub fn uniform(buffers: &BufferState, budget: f64, e_max: f64) -> BudgetedAllocation {
    let chosen: Vec<(usize, usize)> = buffers
        .0
        .iter()
        .enumerate()
        .flat_map(|(i, q)| (1..q.len()).filter(|&t| q[t] > 0).map(move |t| (i, t)))
        .collect();
    split_equally(buffers, &chosen, budget, e_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(rows: &[&[u32]]) -> BufferState {
        BufferState(rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn edf_equal_split() {
        let out = edf(&b(&[&[0, 2, 3]]), 4.0, 10.0, EdfMode::Global);
        assert_eq!(out.allocation.0[0], vec![0.0, 2.0, 0.0]);
        assert_eq!(out.residue, 0.0);
    }

    #[test]
    fn edf_two_users_same_deadline() {
        let buf = b(&[&[0, 1, 0], &[0, 1]]);
        for mode in [EdfMode::Global, EdfMode::PerUser] {
            let out = edf(&buf, 4.0, 10.0, mode);
            assert_eq!(out.allocation.0[0][1], 2.0);
            assert_eq!(out.allocation.0[1][1], 2.0);
        }
    }

    #[test]
    fn edf_modes_differ_on_staggered_deadlines() {
        let buf = b(&[&[0, 0, 1], &[0, 1]]);
        let g = edf(&buf, 4.0, 10.0, EdfMode::Global);
        assert_eq!(g.allocation.0[0][2], 0.0);
        assert_eq!(g.allocation.0[1][1], 4.0);
        let p = edf(&buf, 4.0, 10.0, EdfMode::PerUser);
        assert_eq!(p.allocation.0[0][2], 2.0);
        assert_eq!(p.allocation.0[1][1], 2.0);
    }

    #[test]
    fn edf_cap_leaves_residue() {
        let out = edf(&b(&[&[0, 1]]), 100.0, 10.0, EdfMode::Global);
        assert_eq!(out.allocation.0[0][1], 10.0);
        assert_eq!(out.residue, 90.0);
    }

    #[test]
    fn uniform_cases() {
        let out = uniform(&b(&[&[0, 1, 1], &[0, 2]]), 8.0, 10.0);
        assert_eq!(out.allocation.0, vec![vec![0.0, 2.0, 2.0], vec![0.0, 2.0]]);
        let empty = uniform(&b(&[&[0, 0, 0]]), 8.0, 10.0);
        assert_eq!(empty.allocation.0[0], vec![0.0; 3]);
        let capped = uniform(&b(&[&[0, 2]]), 30.0, 10.0);
        assert_eq!(capped.allocation.0[0][1], 10.0);
        assert_eq!(capped.residue, 10.0);
    }
}
