//! Named parameter storage and its layout contract.
//!
//! Tensor names (in layout order):
//!
//! ```text
//! embed.block{b}.branch{j}.weight   [c_out, c_in, k_j]
//! embed.block{b}.branch{j}.bias     [c_out]
//! embed.block{b}.mix.weight         [c_out, n_kernels * c_out]
//! embed.block{b}.mix.bias           [c_out]
//! embed.block{b}.skip.weight        [c_out, c_in]
//! embed.aggregate.weight            [d_model, c_last]
//! embed.aggregate.bias              [d_model]
//!   -- or, for the dense embedding --
//! embed.dense.weight                [d_model, 2 * window_len]
//! embed.dense.bias                  [d_model]
//! encoder.{l}.norm1.gain / .bias    [d_model]
//! encoder.{l}.attn.wq/wk/wv/wo      [d_model, d_model]
//! encoder.{l}.norm2.gain / .bias    [d_model]
//! encoder.{l}.mlp.w1 [hidden, d_model]   encoder.{l}.mlp.b1 [hidden]
//! encoder.{l}.mlp.w2 [d_model, hidden]   encoder.{l}.mlp.b2 [d_model]
//! head.weight [d_model]   head.bias [1]
//! ```

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::config::{EmbeddingKind, ModelConfig, INPUT_CHANNELS};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        Self { name, shape, init }
    }
}

fn matrix(name: String, rows: usize, cols: usize) -> TensorSpec {
    TensorSpec::new(name, vec![rows, cols], Init::FanIn(cols))
}

fn zeros(name: String, n: usize) -> TensorSpec {
    TensorSpec::new(name, vec![n], Init::Zeros)
}

pub fn embedding_layout(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let d = cfg.d_model;
    match cfg.embedding {
        EmbeddingKind::Conv => {
            let nk = cfg.inception_kernels.len();
            for (b, (c_in, c_out)) in cfg.block_channels().into_iter().enumerate() {
                for (j, &k) in cfg.inception_kernels.iter().enumerate() {
                    specs.push(TensorSpec::new(
                        format!("embed.block{b}.branch{j}.weight"),
                        vec![c_out, c_in, k],
                        Init::FanIn(c_in * k),
                    ));
                    specs.push(zeros(format!("embed.block{b}.branch{j}.bias"), c_out));
                }
                specs.push(matrix(format!("embed.block{b}.mix.weight"), c_out, nk * c_out));
                specs.push(zeros(format!("embed.block{b}.mix.bias"), c_out));
                specs.push(matrix(format!("embed.block{b}.skip.weight"), c_out, c_in));
            }
            let c_last = *cfg.conv_channels.last().unwrap_or(&INPUT_CHANNELS);
            specs.push(matrix("embed.aggregate.weight".into(), d, c_last));
            specs.push(zeros("embed.aggregate.bias".into(), d));
        }
        EmbeddingKind::Dense => {
            specs.push(matrix("embed.dense.weight".into(), d, INPUT_CHANNELS * cfg.window_len));
            specs.push(zeros("embed.dense.bias".into(), d));
        }
    }
    specs
}

/// Full layout of the degradation model: embedding, encoder layers, health head.
pub fn model_layout(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = embedding_layout(cfg);
    let d = cfg.d_model;
    let hidden = cfg.mlp_hidden();
    for l in 0..cfg.n_layers {
        let p = format!("encoder.{l}");
        specs.push(TensorSpec::new(format!("{p}.norm1.gain"), vec![d], Init::Ones));
        specs.push(zeros(format!("{p}.norm1.bias"), d));
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push(matrix(format!("{p}.attn.{w}"), d, d));
        }
        specs.push(TensorSpec::new(format!("{p}.norm2.gain"), vec![d], Init::Ones));
        specs.push(zeros(format!("{p}.norm2.bias"), d));
        specs.push(matrix(format!("{p}.mlp.w1"), hidden, d));
        specs.push(zeros(format!("{p}.mlp.b1"), hidden));
        specs.push(matrix(format!("{p}.mlp.w2"), d, hidden));
        specs.push(zeros(format!("{p}.mlp.b2"), d));
    }
    specs.push(TensorSpec::new("head.weight".into(), vec![d], Init::FanIn(d)));
    specs.push(zeros("head.bias".into(), 1));
    specs
}

/// Ordered map from tensor name to values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_layout(specs: &[TensorSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let tensor = match s.init {
                    Init::Zeros => Tensor::zeros(&s.shape),
                    Init::Ones => Tensor::filled(&s.shape, T::one()),
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                        let n: usize = s.shape.iter().product();
                        let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
                        Tensor::from_vec(&s.shape, data).expect("layout shape")
                    }
                };
                (s.name.clone(), tensor)
            })
            .collect();
        Self { tensors }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::from_layout(&model_layout(cfg), seed))
    }

    pub fn from_tensors(tensors: IndexMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    /// Checks that the name set and every shape match `specs` exactly.
    pub fn validate_layout(&self, specs: &[TensorSpec]) -> Result<()> {
        for s in specs {
            match self.tensors.get(&s.name) {
                None => return Err(Error::Config(format!("tensor '{}' missing from parameters", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "tensor '{}' has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                Some(t) if !t.is_finite() => {
                    return Err(Error::Numeric(format!("tensor '{}' has non-finite values", s.name)))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k)) {
            return Err(Error::Config(format!("unexpected tensor '{extra}' in parameters")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.tensors.get(name).unwrap_or_else(|| panic!("parameter '{name}' not in layout"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("parameter '{name}' not in layout"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect() }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copies every tensor whose name starts with `prefix` into a new set.
    pub fn subset(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, t)| (k.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect() }
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().find(|(_, t)| !t.is_finite()).map(|(k, _)| k.as_str())
    }
}
