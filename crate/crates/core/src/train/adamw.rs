//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("adam_eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One update `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
///
/// Fails before touching any parameter if a gradient is non-finite.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptimizerState<T>,
    opt: &AdamW,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Training(format!("non-finite gradient for parameter '{name}'")));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(opt.beta1);
    let b2 = T::lit(opt.beta2);
    let c1 = T::one() / (T::one() - T::lit(opt.beta1.powi(t)));
    let c2 = T::one() / (T::one() - T::lit(opt.beta2.powi(t)));
    let lr = T::lit(opt.learning_rate);
    let wd = T::lit(opt.weight_decay);
    let eps = T::lit(opt.eps);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((name, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        if p.shape() != g.shape() {
            return Err(Error::Usage(format!("gradient shape mismatch for '{name}'")));
        }
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let update = (m[i] * c1) / ((v[i] * c2).sqrt() + eps) + wd * p[i];
            p[i] = p[i] - lr * update;
        }
    }
    Ok(())
}
