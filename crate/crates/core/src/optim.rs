//! Optimizers and regularization.
//!
//! The L2 penalty is decoupled weight decay: the decay term `l2 * params`
//! is added to the gradient after clipping, so clipping only ever sees the
//! backpropagated signal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Matrix;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter/gradient shape mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter Adam state: first and second moment estimates plus the
/// step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, cfg: AdamConfig) -> AdamState {
        AdamState { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols), t: 0, cfg }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut Matrix, grads: &Matrix, state: &mut AdamState) -> Result<(), OptimError> {
    let shape_err = || {
        OptimError::Shape(params.rows(), params.cols(), grads.rows(), grads.cols())
    };
    if params.shape() != grads.shape() || state.m.shape() != params.shape() {
        return Err(shape_err());
    }
    let AdamConfig { alpha, beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, p) in params.data_mut().iter_mut().enumerate() {
        let g = grads.data()[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= alpha * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub clip_threshold: f64,
    pub l2: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.01, clip_threshold: 1.0, l2: 0.005 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.learning_rate <= 0.0 {
            return Err(OptimError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.clip_threshold <= 0.0 {
            return Err(OptimError::Config(format!("clip threshold {} must be > 0", self.clip_threshold)));
        }
        if self.l2 < 0.0 {
            return Err(OptimError::Config(format!("l2 coefficient {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

/// `params - lr * (grads + l2 * params)`. Callers clip beforehand via
/// [`clip_by_global_norm`].
pub fn sgd_step(params: &mut Matrix, grads: &Matrix, cfg: &SgdConfig) -> Result<(), OptimError> {
    if params.shape() != grads.shape() {
        return Err(OptimError::Shape(params.rows(), params.cols(), grads.rows(), grads.cols()));
    }
    let lr = cfg.learning_rate;
    let l2 = cfg.l2;
    for (p, &g) in params.data_mut().iter_mut().zip(grads.data()) {
        *p -= lr * (g + l2 * *p);
    }
    Ok(())
}

/// Scales the whole gradient set by `threshold / norm` when the global L2
/// norm exceeds the threshold. Returns the pre-clip norm.
pub fn clip_by_global_norm(grads: &mut [&mut Matrix], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be > 0");
    let mut sq = 0.0;
    for g in grads.iter() {
        for v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > threshold {
        let k = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = Matrix::from_vec(2, 2, vec![0.5, -1.5, 2.0, 0.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(2, 2, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &Matrix::zeros(2, 2), &mut st).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_hand_evaluated() {
        // p=0, g=1, defaults: m_hat=1, v_hat=1 -> p' = -a / (1 + eps)
        let mut p = Matrix::zeros(1, 1);
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::new(1, 1, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.at(0, 0) - expected).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_defaults_match_expected_values() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.alpha, 0.001);
        assert_eq!(cfg.beta1, 0.9);
        assert_eq!(cfg.beta2, 0.999);
        assert_eq!(cfg.eps, 1e-8);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let cfg = SgdConfig { learning_rate: 0.01, clip_threshold: 1.0, l2: 0.0 };
        let mut p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        sgd_step(&mut p, &Matrix::from_vec(1, 1, vec![0.5]).unwrap(), &cfg).unwrap();
        assert!((p.at(0, 0) - 0.995).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_no_l2_is_identity() {
        let cfg = SgdConfig { l2: 0.0, ..SgdConfig::default() };
        let mut p = Matrix::from_vec(1, 2, vec![3.0, -4.0]).unwrap();
        let before = p.clone();
        sgd_step(&mut p, &Matrix::zeros(1, 2), &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_defaults_match_expected_values() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.clip_threshold, 1.0);
        assert_eq!(cfg.l2, 0.005);
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let mut g = Matrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap();
        let before = g.clone();
        let norm = clip_by_global_norm(&mut [&mut g], 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_to_threshold() {
        let mut g = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        clip_by_global_norm(&mut [&mut g], 1.0);
        assert!((g.at(0, 0) - 0.6).abs() < 1e-12);
        assert!((g.at(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clip_global_norm_spans_matrices() {
        let mut a = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let mut b = Matrix::from_vec(1, 1, vec![4.0]).unwrap();
        let norm = clip_by_global_norm(&mut [&mut a, &mut b], 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let after = (a.at(0, 0).powi(2) + b.at(0, 0).powi(2)).sqrt();
        assert!(after <= 1.0 + 1e-12);
    }

    #[test]
    fn sgd_step_decreases_convex_quadratic() {
        // f(p) = (p - 3)^2, grad = 2(p - 3)
        let cfg = SgdConfig { learning_rate: 0.05, clip_threshold: 10.0, l2: 0.0 };
        let mut p = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let loss = |p: &Matrix| (p.at(0, 0) - 3.0).powi(2);
        let before = loss(&p);
        let g = Matrix::from_vec(1, 1, vec![2.0 * (p.at(0, 0) - 3.0)]).unwrap();
        sgd_step(&mut p, &g, &cfg).unwrap();
        assert!(loss(&p) < before);
    }
}
