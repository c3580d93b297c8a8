//! Service-success models.
//!
//! The wireless downlink model gives a job served with resource `e` over a
//! channel of level `c`, at distance `f` from the server, the success
//! probability
//!
//! ```text
//! P(e, c) = 2 / (1 + exp(-2e / (f^3 c))) - 1  ==  tanh(e / (f^3 c))
//! ```
//!
//! which is zero at `e = 0`, strictly increasing and concave in `e`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Success probability of one transmission.
pub fn success_probability(e: f64, c: f64, f: f64) -> Result<f64> {
    if !e.is_finite() || !c.is_finite() || !f.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite input to success_probability (e={e}, c={c}, f={f})"
        )));
    }
    if e < 0.0 || c <= 0.0 || f <= 0.0 {
        return Err(Error::Domain(format!(
            "success_probability needs e >= 0, c > 0, f > 0 (e={e}, c={c}, f={f})"
        )));
    }
    Ok(logistic_form(e / (f * f * f * c)))
}

/// `2 / (1 + exp(-2x)) - 1`, evaluated without cancellation for small `x`.
///
/// For `x >= 0` the expression equals `(1 - u) / (1 + u)` with `u = exp(-2x)`,
/// and `1 - u` is computed with `expm1` so tiny allocations keep full
/// relative precision.
fn logistic_form(x: f64) -> f64 {
    let u = (-2.0 * x).exp();
    -(-2.0 * x).exp_m1() / (1.0 + u)
}

/// Which success law the environment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceModel {
    /// Logistic law above.
    #[default]
    Logistic,
    /// Deterministic stub: success iff `e >= level`. Used by oracle tests.
    Threshold { level: f64 },
}

impl ServiceModel {
    pub fn probability(&self, e: f64, c: f64, f: f64) -> Result<f64> {
        match *self {
            ServiceModel::Logistic => success_probability(e, c, f),
            ServiceModel::Threshold { level } => {
                if !e.is_finite() || e < 0.0 {
                    return Err(Error::Domain(format!("invalid resource {e}")));
                }
                Ok(if e > 0.0 && e >= level { 1.0 } else { 0.0 })
            }
        }
    }

    /// True when the per-job objective is concave in the resource.
    pub fn is_concave(&self) -> bool {
        matches!(self, ServiceModel::Logistic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_resource_never_succeeds() {
        assert_eq!(success_probability(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(success_probability(0.0, 3.7, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn matches_tanh_at_reference_points() {
        // tanh(1) to 16 digits.
        let tanh1 = 0.761_594_155_955_764_9;
        assert!((success_probability(1.0, 1.0, 1.0).unwrap() - tanh1).abs() < 1e-15);
        assert!((success_probability(2.0, 2.0, 1.0).unwrap() - tanh1).abs() < 1e-15);
    }

    #[test]
    fn small_allocations_keep_relative_precision() {
        let p = success_probability(1e-12, 1.0, 1.0).unwrap();
        assert!((p / 1e-12 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(success_probability(-1.0, 1.0, 1.0).is_err());
        assert!(success_probability(1.0, 0.0, 1.0).is_err());
        assert!(success_probability(1.0, 1.0, 0.0).is_err());
        assert!(success_probability(f64::NAN, 1.0, 1.0).is_err());
        assert!(success_probability(1.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn threshold_stub() {
        let m = ServiceModel::Threshold { level: 1.0 };
        assert_eq!(m.probability(0.99, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(m.probability(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(m.probability(0.0, 1.0, 1.0).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn equals_tanh(e in 0.0f64..50.0, c in 0.05f64..10.0, f in 0.2f64..3.0) {
                let p = success_probability(e, c, f).unwrap();
                let t = (e / (f.powi(3) * c)).tanh();
                prop_assert!((p - t).abs() <= 1e-12);
                prop_assert!((0.0..1.0).contains(&p) || p == 1.0 && t == 1.0);
            }

            #[test]
            fn monotone(e in 0.0f64..10.0, de in 0.0f64..1.0, c in 0.1f64..5.0, dc in 0.0f64..1.0,
                        f in 0.3f64..2.0, df in 0.0f64..1.0) {
                let base = success_probability(e, c, f).unwrap();
                prop_assert!(success_probability(e + de, c, f).unwrap() >= base);
                prop_assert!(success_probability(e, c + dc, f).unwrap() <= base);
                prop_assert!(success_probability(e, c, f + df).unwrap() <= base);
            }
        }
    }
}
