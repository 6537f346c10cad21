//! Embedding network: patch -> representation.
//!
//! Each inception block runs one same-padded convolution per kernel size,
//! concatenates the branches channel-wise, mixes them with a pointwise
//! convolution followed by GELU, and adds a pointwise-projected skip path.
//! The last block is averaged over time and a dense layer produces the
//! representation.

use crate::data::Patch;
use crate::error::{Error, Result};
use crate::nn::config::{EmbeddingKind, ModelConfig, INPUT_CHANNELS};
use crate::nn::ops::{axpy, conv1d, conv1d_backward, gelu, gelu_grad, linear, linear_backward};
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    input: Vec<T>,
    cat: Vec<T>,
    pre: Vec<T>,
}

/// Activations kept from [`embed_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub enum EmbedCache<T> {
    Conv { blocks: Vec<BlockCache<T>>, pooled: Vec<T> },
    Dense { input: Vec<T> },
}

fn block_forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    b: usize,
    c_in: usize,
    c_out: usize,
    x: Vec<T>,
) -> (Vec<T>, BlockCache<T>) {
    let len = cfg.window_len;
    let nk = cfg.inception_kernels.len();
    let mut cat = vec![T::zero(); nk * c_out * len];
    for (j, &k) in cfg.inception_kernels.iter().enumerate() {
        let w = params.get(&format!("embed.block{b}.branch{j}.weight")).data();
        let bias = params.get(&format!("embed.block{b}.branch{j}.bias")).data();
        let out = &mut cat[j * c_out * len..(j + 1) * c_out * len];
        conv1d(&x, c_in, len, w, Some(bias), c_out, k, out);
    }
    let mix_w = params.get(&format!("embed.block{b}.mix.weight")).data();
    let mix_b = params.get(&format!("embed.block{b}.mix.bias")).data();
    let mut pre = vec![T::zero(); c_out * len];
    conv1d(&cat, nk * c_out, len, mix_w, Some(mix_b), c_out, 1, &mut pre);

    let skip_w = params.get(&format!("embed.block{b}.skip.weight")).data();
    let mut y = vec![T::zero(); c_out * len];
    conv1d(&x, c_in, len, skip_w, None, c_out, 1, &mut y);
    for (yv, &p) in y.iter_mut().zip(&pre) {
        *yv = *yv + gelu(p);
    }
    (y, BlockCache { input: x, cat, pre })
}

#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
    b: usize,
    c_in: usize,
    c_out: usize,
    cache: &BlockCache<T>,
    dy: &[T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let len = cfg.window_len;
    let nk = cfg.inception_kernels.len();
    let mut dx = need_dx.then(|| vec![T::zero(); c_in * len]);

    let skip_name = format!("embed.block{b}.skip.weight");
    conv1d_backward(
        &cache.input,
        c_in,
        len,
        params.get(&skip_name).data(),
        c_out,
        1,
        dy,
        dx.as_deref_mut(),
        grads.get_mut(&skip_name).data_mut(),
        None,
    );

    let dpre: Vec<T> = dy.iter().zip(&cache.pre).map(|(&g, &p)| g * gelu_grad(p)).collect();
    let mix_w = format!("embed.block{b}.mix.weight");
    let mix_b = format!("embed.block{b}.mix.bias");
    let mut dcat = vec![T::zero(); nk * c_out * len];
    conv1d_backward(
        &cache.cat,
        nk * c_out,
        len,
        params.get(&mix_w).data(),
        c_out,
        1,
        &dpre,
        Some(&mut dcat),
        grads.get_mut(&mix_w).data_mut(),
        None,
    );
    add_row_sums(&dpre, len, grads.get_mut(&mix_b).data_mut());

    for (j, &k) in cfg.inception_kernels.iter().enumerate() {
        let wn = format!("embed.block{b}.branch{j}.weight");
        let bn = format!("embed.block{b}.branch{j}.bias");
        let dout = &dcat[j * c_out * len..(j + 1) * c_out * len];
        conv1d_backward(
            &cache.input,
            c_in,
            len,
            params.get(&wn).data(),
            c_out,
            k,
            dout,
            dx.as_deref_mut(),
            grads.get_mut(&wn).data_mut(),
            None,
        );
        add_row_sums(dout, len, grads.get_mut(&bn).data_mut());
    }
    dx
}

/// Maps a patch to its `d_model`-wide representation.
pub fn embed_forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    patch: &Patch<T>,
) -> Result<(Vec<T>, EmbedCache<T>)> {
    if patch.window_len() != cfg.window_len {
        return Err(Error::Config(format!(
            "patch window {} does not match model window {}",
            patch.window_len(),
            cfg.window_len
        )));
    }
    let d = cfg.d_model;
    match cfg.embedding {
        EmbeddingKind::Dense => {
            let input = patch.channels().to_vec();
            let w = params.get("embed.dense.weight").data();
            let b = params.get("embed.dense.bias").data();
            let rep = linear(&input, 1, INPUT_CHANNELS * cfg.window_len, w, Some(b), d);
            Ok((rep, EmbedCache::Dense { input }))
        }
        EmbeddingKind::Conv => {
            let len = cfg.window_len;
            let mut x = patch.channels().to_vec();
            let mut blocks = Vec::with_capacity(cfg.conv_channels.len());
            for (b, (c_in, c_out)) in cfg.block_channels().into_iter().enumerate() {
                let (y, cache) = block_forward(cfg, params, b, c_in, c_out, x);
                blocks.push(cache);
                x = y;
            }
            let c_last = *cfg.conv_channels.last().expect("validated");
            let inv_len = T::one() / T::from_usize_lossy(len);
            let pooled: Vec<T> = x.chunks_exact(len).map(|row| row.iter().copied().sum::<T>() * inv_len).collect();
            let w = params.get("embed.aggregate.weight").data();
            let bias = params.get("embed.aggregate.bias").data();
            let rep = linear(&pooled, 1, c_last, w, Some(bias), d);
            Ok((rep, EmbedCache::Conv { blocks, pooled }))
        }
    }
}

/// Accumulates parameter gradients of the embedding given `d rep`.
pub fn embed_backward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    cache: &EmbedCache<T>,
    drep: &[T],
    grads: &mut ModelParams<T>,
) -> Result<()> {
    if drep.len() != cfg.d_model {
        return Err(Error::Usage(format!(
            "representation gradient has {} entries, expected {}",
            drep.len(),
            cfg.d_model
        )));
    }
    let d = cfg.d_model;
    match cache {
        EmbedCache::Dense { input } => {
            let n_in = INPUT_CHANNELS * cfg.window_len;
            let dw = grads.get_mut("embed.dense.weight").data_mut();
            for o in 0..d {
                axpy(drep[o], input, &mut dw[o * n_in..(o + 1) * n_in]);
            }
            add_row_sums(drep, 1, grads.get_mut("embed.dense.bias").data_mut());
        }
        EmbedCache::Conv { blocks, pooled } => {
            let len = cfg.window_len;
            let c_last = pooled.len();
            let w = params.get("embed.aggregate.weight").data();
            let dw = grads.get_mut("embed.aggregate.weight").data_mut();
            let dpooled = linear_backward(pooled, 1, c_last, w, d, drep, dw, None);
            add_row_sums(drep, 1, grads.get_mut("embed.aggregate.bias").data_mut());

            let inv_len = T::one() / T::from_usize_lossy(len);
            let mut dy: Vec<T> = dpooled.iter().flat_map(|&g| std::iter::repeat_n(g * inv_len, len)).collect();
            let channels = cfg.block_channels();
            for b in (0..blocks.len()).rev() {
                let (c_in, c_out) = channels[b];
                match block_backward(cfg, params, grads, b, c_in, c_out, &blocks[b], &dy, b > 0) {
                    Some(dx) => dy = dx,
                    None => break,
                }
            }
        }
    }
    Ok(())
}

/// Representation only, without keeping the cache.
pub fn embed<T: Scalar>(cfg: &ModelConfig, params: &ModelParams<T>, patch: &Patch<T>) -> Result<Vec<T>> {
    embed_forward(cfg, params, patch).map(|(rep, _)| rep)
}

// db[o] += sum of row o of a `rows x len` matrix.
fn add_row_sums<T: Scalar>(m: &[T], len: usize, db: &mut [T]) {
    for (o, row) in m.chunks_exact(len).enumerate() {
        db[o] = db[o] + row.iter().copied().sum::<T>();
    }
}
