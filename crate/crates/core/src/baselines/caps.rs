//! Hard per-slot expenditure caps applied after the fact to an allocation.

use crate::env::{Allocation, BufferState};

/// Scales every entry by the same factor so the expenditure is at most `cap`.
pub fn cap_scale(a: &Allocation, buffers: &BufferState, cap: f64) -> Allocation {
    let spent = a.expenditure(buffers);
    if spent <= cap {
        return a.clone();
    }
    let factor = cap.max(0.0) / spent;
    Allocation(
        a.0.iter()
            .map(|row| row.iter().map(|e| e * factor).collect())
            .collect(),
    )
}

/// Keeps buckets in increasing remaining time (ties by user) until the
/// expenditure reaches `cap`; the boundary bucket is scaled down, the rest
/// are zeroed.
pub fn cap_earliest(a: &Allocation, buffers: &BufferState, cap: f64) -> Allocation {
    if a.expenditure(buffers) <= cap {
        return a.clone();
    }
    let mut buckets: Vec<(usize, usize)> = buffers
        .0
        .iter()
        .enumerate()
        .flat_map(|(i, q)| (1..q.len()).filter(move |&t| q[t] > 0).map(move |t| (t, i)))
        .collect();
    buckets.sort_unstable();

    let mut out = Allocation(a.0.iter().map(|r| vec![0.0; r.len()]).collect());
    let mut left = cap.max(0.0);
    for (t, i) in buckets {
        let e = a.0[i][t];
        let cost = e * f64::from(buffers.0[i][t]);
        if cost <= left {
            out.0[i][t] = e;
            left -= cost;
        } else {
            out.0[i][t] = e * (left / cost);
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf() -> BufferState {
        BufferState(vec![vec![0, 1, 1]])
    }

    #[test]
    fn scale_identity_within_cap() {
        let a = Allocation(vec![vec![0.0, 2.0, 2.0]]);
        assert_eq!(cap_scale(&a, &buf(), 8.0), a);
    }

    #[test]
    fn scale_halves() {
        let a = Allocation(vec![vec![0.0, 4.0, 4.0]]);
        assert_eq!(cap_scale(&a, &buf(), 4.0).0[0], vec![0.0, 2.0, 2.0]);
        let z = Allocation(vec![vec![0.0; 3]]);
        assert_eq!(cap_scale(&z, &buf(), 0.0), z);
    }

    #[test]
    fn earliest_keeps_shortest_deadline() {
        let a = Allocation(vec![vec![0.0, 3.0, 3.0]]);
        assert_eq!(cap_earliest(&a, &buf(), 3.0).0[0], vec![0.0, 3.0, 0.0]);
        assert_eq!(cap_earliest(&a, &buf(), 6.0), a);
        assert_eq!(cap_earliest(&a, &buf(), 0.0).0[0], vec![0.0; 3]);
        assert_eq!(cap_earliest(&a, &buf(), 4.5).0[0], vec![0.0, 3.0, 1.5]);
    }
}
