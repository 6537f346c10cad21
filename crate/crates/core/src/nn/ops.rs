//! Slice-level kernels shared by the layers. Matrices are row-major; weight
//! matrices are stored `out x in`.

use crate::scalar::Scalar;

/// Dot product with eight independent accumulators so the reduction vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub fn sum<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().sum()
}

// sqrt(2 / pi)
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Same-padded 1-D convolution over `len` time steps.
///
/// `x` is `c_in x len`, `w` is `c_out x c_in x k` (odd `k`), output `c_out x len`
/// is overwritten. Zero padding of `k / 2` on both sides.
#[allow(clippy::too_many_arguments)]
pub fn conv1d<T: Scalar>(
    x: &[T],
    c_in: usize,
    len: usize,
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    k: usize,
    out: &mut [T],
) {
    let pad = (k / 2) as isize;
    for o in 0..c_out {
        let row = &mut out[o * len..(o + 1) * len];
        let b = bias.map_or(T::zero(), |b| b[o]);
        row.iter_mut().for_each(|v| *v = b);
        for i in 0..c_in {
            let xr = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let wv = w[(o * c_in + i) * k + kk];
                let shift = kk as isize - pad;
                let (t0, t1) = valid_range(shift, len);
                if t0 < t1 {
                    let s0 = (t0 as isize + shift) as usize;
                    axpy(wv, &xr[s0..s0 + (t1 - t0)], &mut row[t0..t1]);
                }
            }
        }
    }
}

/// Gradients of [`conv1d`]; all outputs accumulate.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    c_in: usize,
    len: usize,
    w: &[T],
    c_out: usize,
    k: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let pad = (k / 2) as isize;
    if let Some(db) = db {
        for o in 0..c_out {
            db[o] = db[o] + sum(&dout[o * len..(o + 1) * len]);
        }
    }
    for o in 0..c_out {
        let drow = &dout[o * len..(o + 1) * len];
        for i in 0..c_in {
            let xr = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let shift = kk as isize - pad;
                let (t0, t1) = valid_range(shift, len);
                if t0 >= t1 {
                    continue;
                }
                let s0 = (t0 as isize + shift) as usize;
                let n = t1 - t0;
                let widx = (o * c_in + i) * k + kk;
                dw[widx] = dw[widx] + dot(&drow[t0..t1], &xr[s0..s0 + n]);
                if let Some(dx) = dx.as_deref_mut() {
                    let dxr = &mut dx[i * len..(i + 1) * len];
                    axpy(w[widx], &drow[t0..t1], &mut dxr[s0..s0 + n]);
                }
            }
        }
    }
}

// Output positions t with 0 <= t + shift < len.
#[inline]
fn valid_range(shift: isize, len: usize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = (len as isize - shift).min(len as isize).max(0) as usize;
    (t0.min(len), t1)
}

/// `y = x W^T (+ b)`: `x` is `n x d_in`, `w` is `d_out x d_in`.
pub fn linear<T: Scalar>(x: &[T], n: usize, d_in: usize, w: &[T], b: Option<&[T]>, d_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * d_out];
    for r in 0..n {
        let xr = &x[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            let bias = b.map_or(T::zero(), |b| b[o]);
            y[r * d_out + o] = dot(xr, &w[o * d_in..(o + 1) * d_in]) + bias;
        }
    }
    y
}

/// Backward of [`linear`]: accumulates into `dw`/`db`, returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    n: usize,
    d_in: usize,
    w: &[T],
    d_out: usize,
    dy: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * d_in];
    for r in 0..n {
        let xr = &x[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            let g = dy[r * d_out + o];
            if g == T::zero() {
                continue;
            }
            axpy(g, xr, &mut dw[o * d_in..(o + 1) * d_in]);
            axpy(g, &w[o * d_in..(o + 1) * d_in], &mut dx[r * d_in..(r + 1) * d_in]);
        }
    }
    if let Some(db) = db {
        for r in 0..n {
            for o in 0..d_out {
                db[o] = db[o] + dy[r * d_out + o];
            }
        }
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Row-wise layer normalization of an `n x d` matrix.
pub fn layer_norm<T: Scalar>(x: &[T], n: usize, d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, LayerNormCache<T>) {
    let eps = T::lit(LAYER_NORM_EPS);
    let dd = T::from_usize_lossy(d);
    let mut y = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = sum(row) / dd;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dd;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gain[c] * h + bias[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LayerNormCache<T>,
    n: usize,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let dd = T::from_usize_lossy(d);
    let mut dx = vec![T::zero(); n * d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for c in 0..d {
            dgain[c] = dgain[c] + g[c] * xh[c];
            dbias[c] = dbias[c] + g[c];
            dxhat[c] = g[c] * gain[c];
        }
        let m1 = sum(&dxhat) / dd;
        let m2 = dot(&dxhat, xh) / dd;
        for c in 0..d {
            dx[r * d + c] = cache.inv_std[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
