//! Pre-norm transformer encoder and the scalar health head.
//!
//! No positional encoding is added, so the encoder is permutation
//! equivariant over sequence positions.

use crate::nn::attention::{multi_head_backward, multi_head_forward, MultiHeadCache};
use crate::nn::config::ModelConfig;
use crate::nn::ops::{dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LayerNormCache};
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: MultiHeadCache<T>,
    o: Vec<T>,
    ln2: LayerNormCache<T>,
    b: Vec<T>,
    hpre: Vec<T>,
    hact: Vec<T>,
}

/// Everything the backward pass needs from [`encode_forward`].
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    n: usize,
    layers: Vec<LayerCache<T>>,
    last: Vec<T>,
}

impl<T> EncoderCache<T> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn layer_forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    l: usize,
    x: Vec<T>,
    n: usize,
) -> (Vec<T>, LayerCache<T>) {
    let d = cfg.d_model;
    let hid = cfg.mlp_hidden();
    let p = |s: &str| params.get(&format!("encoder.{l}.{s}")).data();

    let (a, ln1) = layer_norm(&x, n, d, p("norm1.gain"), p("norm1.bias"));
    let q = linear(&a, n, d, p("attn.wq"), None, d);
    let k = linear(&a, n, d, p("attn.wk"), None, d);
    let v = linear(&a, n, d, p("attn.wv"), None, d);
    let (o, attn) = multi_head_forward(&q, &k, &v, n, d, cfg.n_heads);
    let proj = linear(&o, n, d, p("attn.wo"), None, d);
    let x1: Vec<T> = x.iter().zip(&proj).map(|(&a, &b)| a + b).collect();

    let (b, ln2) = layer_norm(&x1, n, d, p("norm2.gain"), p("norm2.bias"));
    let hpre = linear(&b, n, d, p("mlp.w1"), Some(p("mlp.b1")), hid);
    let hact: Vec<T> = hpre.iter().map(|&z| gelu(z)).collect();
    let m = linear(&hact, n, hid, p("mlp.w2"), Some(p("mlp.b2")), d);
    let x2: Vec<T> = x1.iter().zip(&m).map(|(&a, &b)| a + b).collect();

    (x2, LayerCache { ln1, a, q, k, v, attn, o, ln2, b, hpre, hact })
}

fn add_bias_grad<T: Scalar>(dy: &[T], n: usize, width: usize, db: &mut [T]) {
    for r in 0..n {
        for c in 0..width {
            db[c] = db[c] + dy[r * width + c];
        }
    }
}

fn add_into<T: Scalar>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = *a + b;
    }
}

fn layer_backward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
    l: usize,
    c: &LayerCache<T>,
    n: usize,
    dx2: &[T],
) -> Vec<T> {
    let d = cfg.d_model;
    let hid = cfg.mlp_hidden();
    let name = |s: &str| format!("encoder.{l}.{s}");
    let p = |s: &str| params.get(&name(s)).data();

    // MLP branch
    let dhact = linear_backward(&c.hact, n, hid, p("mlp.w2"), d, dx2, grads.get_mut(&name("mlp.w2")).data_mut(), None);
    add_bias_grad(dx2, n, d, grads.get_mut(&name("mlp.b2")).data_mut());
    let dhpre: Vec<T> = dhact.iter().zip(&c.hpre).map(|(&g, &z)| g * gelu_grad(z)).collect();
    let db = linear_backward(&c.b, n, d, p("mlp.w1"), hid, &dhpre, grads.get_mut(&name("mlp.w1")).data_mut(), None);
    add_bias_grad(&dhpre, n, hid, grads.get_mut(&name("mlp.b1")).data_mut());
    let mut dgain = vec![T::zero(); d];
    let mut dbias = vec![T::zero(); d];
    let dx1_ln = layer_norm_backward(&db, &c.ln2, n, d, p("norm2.gain"), &mut dgain, &mut dbias);
    add_into(grads.get_mut(&name("norm2.gain")).data_mut(), &dgain);
    add_into(grads.get_mut(&name("norm2.bias")).data_mut(), &dbias);
    let mut dx1 = dx2.to_vec();
    add_into(&mut dx1, &dx1_ln);

    // attention branch
    let d_o = linear_backward(&c.o, n, d, p("attn.wo"), d, &dx1, grads.get_mut(&name("attn.wo")).data_mut(), None);
    let (dq, dk, dv) = multi_head_backward(&c.q, &c.k, &c.v, n, d, cfg.n_heads, &c.attn, &d_o);
    let mut da = linear_backward(&c.a, n, d, p("attn.wq"), d, &dq, grads.get_mut(&name("attn.wq")).data_mut(), None);
    add_into(
        &mut da,
        &linear_backward(&c.a, n, d, p("attn.wk"), d, &dk, grads.get_mut(&name("attn.wk")).data_mut(), None),
    );
    add_into(
        &mut da,
        &linear_backward(&c.a, n, d, p("attn.wv"), d, &dv, grads.get_mut(&name("attn.wv")).data_mut(), None),
    );
    dgain.iter_mut().chain(dbias.iter_mut()).for_each(|v| *v = T::zero());
    let dx_ln = layer_norm_backward(&da, &c.ln1, n, d, p("norm1.gain"), &mut dgain, &mut dbias);
    add_into(grads.get_mut(&name("norm1.gain")).data_mut(), &dgain);
    add_into(grads.get_mut(&name("norm1.bias")).data_mut(), &dbias);
    let mut dx = dx1;
    add_into(&mut dx, &dx_ln);
    dx
}

/// Runs the encoder over `reps` (one `d_model` row per position) and applies
/// the health head to every position.
pub fn encode_forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    reps: &[Vec<T>],
) -> (Vec<T>, EncoderCache<T>) {
    let n = reps.len();
    let d = cfg.d_model;
    let mut x: Vec<T> = reps.iter().flat_map(|r| r.iter().copied()).collect();
    assert_eq!(x.len(), n * d, "representation width must equal d_model");
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (y, cache) = layer_forward(cfg, params, l, x, n);
        layers.push(cache);
        x = y;
    }
    let w = params.get("head.weight").data();
    let b = params.get("head.bias").data()[0];
    let h = x.chunks_exact(d).map(|row| dot(row, w) + b).collect();
    (h, EncoderCache { n, layers, last: x })
}

/// Backward through head and encoder; returns the gradient for every input row.
pub fn encode_backward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    cache: &EncoderCache<T>,
    dh: &[T],
    grads: &mut ModelParams<T>,
) -> Vec<Vec<T>> {
    let n = cache.n;
    let d = cfg.d_model;
    let w = params.get("head.weight").data();
    {
        let dw = grads.get_mut("head.weight").data_mut();
        for (row, &g) in cache.last.chunks_exact(d).zip(dh) {
            for c in 0..d {
                dw[c] = dw[c] + g * row[c];
            }
        }
    }
    let db = grads.get_mut("head.bias").data_mut();
    db[0] = db[0] + dh.iter().copied().sum::<T>();

    let mut dx: Vec<T> = dh.iter().flat_map(|&g| w.iter().map(move |&wc| g * wc)).collect();
    for l in (0..cfg.n_layers).rev() {
        dx = layer_backward(cfg, params, grads, l, &cache.layers[l], n, &dx);
    }
    dx.chunks_exact(d).map(<[T]>::to_vec).collect()
}

/// Health scalar per position.
pub fn encode_sequence<T: Scalar>(cfg: &ModelConfig, params: &ModelParams<T>, reps: &[Vec<T>]) -> Vec<T> {
    encode_forward(cfg, params, reps).0
}
