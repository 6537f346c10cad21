//! Small dense symmetric eigen-solvers.

use num_traits::Float;

use crate::scalar::Scalar;

/// Eigenpairs of a symmetric `n x n` matrix (row-major) by cyclic Jacobi
/// rotations, sorted by descending eigenvalue. Eigenvectors are returned as
/// rows.
pub fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = T::epsilon() * scale;
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (Float::abs(theta) + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Largest `k` eigenpairs of a symmetric matrix by shifted subspace
/// iteration with Rayleigh-Ritz refinement. Suited to large `n`, small `k`.
pub fn top_eigenpairs(a: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = k.min(n);
    if n <= 64 {
        let (vals, vecs) = symmetric_eigen(a, n);
        return (vals[..k].to_vec(), vecs[..k].to_vec());
    }
    // shift by the Gershgorin radius so the wanted end of the spectrum dominates
    let shift = (0..n).map(|i| a[i * n..(i + 1) * n].iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let p = (k + 6).min(n);
    let mut q: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..n)
                .map(|i| ((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0 - 0.5 + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    orthonormalize(&mut q);
    let mut prev = vec![f64::INFINITY; k];
    for _ in 0..2000 {
        let mut z: Vec<Vec<f64>> = q.iter().map(|col| mat_vec_shifted(a, n, col, shift)).collect();
        orthonormalize(&mut z);
        q = z;
        let (vals, _) = ritz(a, n, &q);
        let done = vals.iter().zip(&prev).all(|(v, p)| (v - p).abs() <= 1e-12 * v.abs().max(1.0));
        prev = vals[..k].to_vec();
        if done {
            break;
        }
    }
    let (vals, coeffs) = ritz(a, n, &q);
    let vecs = coeffs[..k]
        .iter()
        .map(|c| {
            let mut v = vec![0.0; n];
            for (cj, col) in c.iter().zip(&q) {
                for i in 0..n {
                    v[i] += cj * col[i];
                }
            }
            v
        })
        .collect();
    (vals[..k].to_vec(), vecs)
}

fn mat_vec_shifted(a: &[f64], n: usize, x: &[f64], shift: f64) -> Vec<f64> {
    (0..n).map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + shift * x[i]).collect()
}

fn ritz(a: &[f64], n: usize, q: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = q.len();
    let aq: Vec<Vec<f64>> = q.iter().map(|c| mat_vec_shifted(a, n, c, 0.0)).collect();
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] = q[i].iter().zip(&aq[j]).map(|(x, y)| x * y).sum();
        }
    }
    symmetric_eigen(&h, p)
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for j in 0..cols.len() {
        for _ in 0..2 {
            for i in 0..j {
                let d: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= d * y;
                }
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
    }
}
