//! Scaled dot-product attention, single- and multi-head.

use crate::error::{Error, Result};
use crate::nn::ops::{dot, softmax_in_place};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// `softmax(Q K^T / sqrt(d_k)) V` with row-wise softmax.
///
/// Returns the output (`n_q x d_v`) and the weight matrix (`n_q x n_k`).
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n_q, d_k) = dims2(q)?;
    let (n_k, d_k2) = dims2(k)?;
    let (n_v, d_v) = dims2(v)?;
    if d_k != d_k2 || n_k != n_v || n_k == 0 {
        return Err(Error::Config(format!(
            "attention shapes incompatible: Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scale = T::one() / T::from_usize_lossy(d_k).sqrt();
    let mut weights = vec![T::zero(); n_q * n_k];
    let mut out = vec![T::zero(); n_q * d_v];
    for i in 0..n_q {
        let qi = &q.data()[i * d_k..(i + 1) * d_k];
        let row = &mut weights[i * n_k..(i + 1) * n_k];
        for (j, w) in row.iter_mut().enumerate() {
            *w = dot(qi, &k.data()[j * d_k..(j + 1) * d_k]) * scale;
        }
        softmax_in_place(row);
        for (j, &p) in row.iter().enumerate() {
            for c in 0..d_v {
                out[i * d_v + c] = out[i * d_v + c] + p * v.data()[j * d_v + c];
            }
        }
    }
    Ok((Tensor::from_vec(&[n_q, d_v], out)?, Tensor::from_vec(&[n_q, n_k], weights)?))
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Config(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Cached softmax weights for every head (`n x n` each).
#[derive(Clone, Debug)]
pub struct MultiHeadCache<T> {
    pub probs: Vec<Vec<T>>,
}

/// Self-attention over an `n x d` sequence split into `heads` column groups.
/// `q`, `k`, `v` are already projected.
pub fn multi_head_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, MultiHeadCache<T>) {
    let dk = d / heads;
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let mut p = vec![T::zero(); n * n];
        for i in 0..n {
            let qi = &q[i * d + cols.start..i * d + cols.end];
            let row = &mut p[i * n..(i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale;
            }
            softmax_in_place(row);
            for j in 0..n {
                let w = row[j];
                for c in cols.clone() {
                    out[i * d + c] = out[i * d + c] + w * v[j * d + c];
                }
            }
        }
        probs.push(p);
    }
    (out, MultiHeadCache { probs })
}

/// Returns `(dq, dk, dv)` given the gradient of the attention output.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
    cache: &MultiHeadCache<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dk = d / heads;
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dkm = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n];
    for (h, p) in cache.probs.iter().enumerate() {
        let c0 = h * dk;
        for i in 0..n {
            let pi = &p[i * n..(i + 1) * n];
            let doi = &dout[i * d + c0..i * d + c0 + dk];
            for j in 0..n {
                dp[j] = dot(doi, &v[j * d + c0..j * d + c0 + dk]);
                for c in 0..dk {
                    dv[j * d + c0 + c] = dv[j * d + c0 + c] + pi[j] * doi[c];
                }
            }
            let inner = dot(pi, &dp);
            for j in 0..n {
                let ds = pi[j] * (dp[j] - inner) * scale;
                for c in 0..dk {
                    dq[i * d + c0 + c] = dq[i * d + c0 + c] + ds * k[j * d + c0 + c];
                    dkm[j * d + c0 + c] = dkm[j * d + c0 + c] + ds * q[i * d + c0 + c];
                }
            }
        }
    }
    (dq, dkm, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn single_key_returns_value() {
        let q = m(1, 3, &[0.3, -2.0, 5.0]);
        let k = m(1, 3, &[1.0, 1.0, 1.0]);
        let v = m(1, 2, &[7.0, -1.5]);
        let (out, w) = attention(&q, &k, &v).unwrap();
        assert_eq!(out.data(), &[7.0, -1.5]);
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn zero_scores_average_values() {
        let q = m(2, 2, &[0.0; 4]);
        let k = m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = m(3, 2, &[1.0, 10.0, 2.0, 20.0, 6.0, 60.0]);
        let (out, _) = attention(&q, &k, &v).unwrap();
        for row in out.data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12);
            assert!((row[1] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_softmax() {
        let q = m(1, 2, &[10.0, 0.0]);
        let k = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (out, w) = attention(&q, &k, &v).unwrap();
        let a = 10.0 / 2f64.sqrt();
        let p0 = 1.0 / (1.0 + (-a).exp());
        assert!((w.data()[0] - p0).abs() < 1e-15);
        assert!((w.data()[0] - 0.99916).abs() < 1e-5);
        assert!((out.data()[1] - 0.00084).abs() < 1e-5);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let q = m(1, 2, &[1.0, 0.0]);
        let k = m(2, 3, &[0.0; 6]);
        let v = m(2, 2, &[0.0; 4]);
        assert!(attention(&q, &k, &v).is_err());
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let q = m(3, 2, &[5.0, -3.0, 0.1, 0.2, -40.0, 40.0]);
        let k = m(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.0, -2.0]);
        let v = m(4, 1, &[1.0, -2.0, 4.0, 0.5]);
        let (out, w) = attention(&q, &k, &v).unwrap();
        for (row, o) in w.data().chunks(4).zip(out.data()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(*o >= -2.0 - 1e-12 && *o <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn multi_head_single_head_matches_public_op() {
        let q = [0.3, -1.0, 2.0, 0.5, -0.7, 0.1];
        let k = [1.0, 0.0, -1.0, 2.0, 0.5, 0.5];
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (out, _) = multi_head_forward(&q, &k, &v, 3, 2, 1);
        let (expected, _) = attention(&m(3, 2, &q), &m(3, 2, &k), &m(3, 2, &v)).unwrap();
        for (a, b) in out.iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
