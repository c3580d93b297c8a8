use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `params` along `grads` (in parameter order).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} arrays", grads.len(), params.len())));
        }
        for (k, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.name(k))));
            }
        }
        if self.m.is_empty() {
            self.m = params.values().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.data[j] / c1;
                let vh = v.data[j] / c2;
                p.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// `target ← τ·online + (1−τ)·target`.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Domain(format!("soft update rate {tau} outside (0, 1]")));
    }
    target.check_layout(online)?;
    for (t, o) in target.values_mut().zip(online.values()) {
        t.data.iter_mut().zip(&o.data).for_each(|(t, &o)| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(x: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("x", Matrix::filled(1, 1, x));
        ps
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut ps = scalar_set(1.5);
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps, &[Matrix::zeros(1, 1)]).unwrap();
        assert_eq!(ps.values().next().unwrap().data[0], 1.5);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps).
        let mut ps = scalar_set(0.0);
        let mut opt = Adam::new(0.01);
        opt.step(&mut ps, &[Matrix::filled(1, 1, 0.5)]).unwrap();
        let expected = -0.01 * 0.5 / (0.5 + 1e-8);
        assert!((ps.values().next().unwrap().data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_is_stateful() {
        let g = [Matrix::filled(1, 1, 0.3)];
        let mut a = scalar_set(0.0);
        let mut oa = Adam::new(0.01);
        oa.step(&mut a, &g).unwrap();
        oa.step(&mut a, &g).unwrap();
        let mut b = scalar_set(0.0);
        let mut ob = Adam::new(0.02);
        ob.step(&mut b, &[Matrix::filled(1, 1, 0.3)]).unwrap();
        assert_ne!(a.values().next().unwrap().data[0], b.values().next().unwrap().data[0]);
    }

    #[test]
    fn soft_update_cases() {
        let online = scalar_set(1.0);
        let mut t = scalar_set(0.0);
        soft_update(&mut t, &online, 0.005).unwrap();
        assert!((t.values().next().unwrap().data[0] - 0.005).abs() < 1e-15);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        soft_update(&mut t, &online, 0.3).unwrap();
        assert_eq!(t, online);
        assert!(soft_update(&mut t, &online, 0.0).is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Matrix::filled(1, 2, 3.0), Matrix::filled(1, 1, 4.0)];
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
