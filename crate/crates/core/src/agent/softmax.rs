//! Importance-weighted softmax over sampled action values.

/// `Σ_k w_k q_k / Σ_k w_k` with `w_k = exp(β q_k) / p_k`, evaluated in log
/// space. `log_p[k]` is the log density of sample `k` under the proposal.
pub fn softmax_value(q: &[f64], log_p: &[f64], beta: f64) -> f64 {
    debug_assert_eq!(q.len(), log_p.len());
    let logits: Vec<f64> = q.iter().zip(log_p).map(|(&q, &lp)| beta * q - lp).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &qk) in logits.iter().zip(q) {
        let w = (l - m).exp();
        num += w * qk;
        den += w;
    }
    num / den
}

/// Log density of an isotropic Gaussian `N(0, σ²I)` at `eps`.
pub fn gaussian_log_density(eps: &[f64], sigma: f64) -> f64 {
    let d = eps.len() as f64;
    let sq: f64 = eps.iter().map(|e| e * e).sum();
    -0.5 * sq / (sigma * sigma) - d * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_returns_its_value() {
        for beta in [0.0, 1.0, 1e3] {
            assert_eq!(softmax_value(&[4.2], &[-1.3], beta), 4.2);
        }
    }

    #[test]
    fn zero_beta_is_importance_weighted_mean() {
        let q = [1.0, 2.0, 4.0];
        let p: [f64; 3] = [0.5, 0.25, 0.25];
        let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let expected = (1.0 / 0.5 + 2.0 / 0.25 + 4.0 / 0.25) / (1.0 / 0.5 + 1.0 / 0.25 + 1.0 / 0.25);
        assert!((softmax_value(&q, &lp, 0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn large_beta_is_stable() {
        let v = softmax_value(&[1.0, 2.0], &[0.0, 0.0], 1e3);
        assert!((v - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn density_rescaling_invariance(
            q in proptest::collection::vec(-5.0..5.0f64, 1..10),
            shift in -20.0..20.0f64,
            beta in 0.0..20.0f64,
        ) {
            let lp: Vec<f64> = q.iter().enumerate().map(|(k, _)| -(k as f64) * 0.3).collect();
            let shifted: Vec<f64> = lp.iter().map(|x| x + shift).collect();
            let a = softmax_value(&q, &lp, beta);
            let b = softmax_value(&q, &shifted, beta);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
