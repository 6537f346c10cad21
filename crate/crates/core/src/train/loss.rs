//! Pairwise degradation loss over a chronologically ordered sequence.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Sum over adjacent pairs of `softplus(-(h_i - h_{i+1}) / tau)` and its
/// gradient with respect to every `h_i`.
///
/// Each term equals `-ln(D / (D + 1))` with `D = exp((h_i - h_{i+1}) / tau)`,
/// evaluated without overflow.
pub fn degradation_loss<T: Scalar>(h: &[T], tau: T) -> Result<(T, Vec<T>)> {
    if tau.is_nan() || tau <= T::zero() {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if h.len() < 2 {
        return Err(Error::Usage(format!("degradation loss needs at least 2 outputs, got {}", h.len())));
    }
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); h.len()];
    for i in 0..h.len() - 1 {
        let z = (h[i] - h[i + 1]) / tau;
        loss = loss + softplus(-z);
        // d softplus(-z) / dz = -sigmoid(-z)
        let g = sigmoid(-z) / tau;
        grad[i] = grad[i] - g;
        grad[i + 1] = grad[i + 1] + g;
    }
    Ok((loss, grad))
}

/// Loss of a single pair as a function of `delta = h_i - h_{i+1}`.
pub fn pair_loss<T: Scalar>(delta: T, tau: T) -> T {
    softplus(-delta / tau)
}
