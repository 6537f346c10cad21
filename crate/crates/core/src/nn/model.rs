//! Full degradation model: embedding per patch, encoder over the sequence,
//! one health scalar per position.

use crate::data::Patch;
use crate::error::{Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::embed::{embed, embed_backward, embed_forward, EmbedCache};
use crate::nn::encoder::{encode_backward, encode_forward, EncoderCache};
use crate::nn::params::{model_layout, ModelParams};
use crate::scalar::Scalar;

/// Activations of one forward pass over a patch sequence.
#[derive(Clone, Debug)]
pub struct SequenceCache<T> {
    embeds: Vec<EmbedCache<T>>,
    encoder: EncoderCache<T>,
}

impl<T> SequenceCache<T> {
    pub fn len(&self) -> usize {
        self.embeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeds.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.validate_layout(&model_layout(&config))?;
        Ok(Self { config, params })
    }

    pub fn embed(&self, patch: &Patch<T>) -> Result<Vec<T>> {
        embed(&self.config, &self.params, patch)
    }

    pub fn representations(&self, patches: &[Patch<T>]) -> Result<Vec<Vec<T>>> {
        patches.iter().map(|p| self.embed(p)).collect()
    }

    pub fn encode_sequence(&self, reps: &[Vec<T>]) -> Result<Vec<T>> {
        self.check_reps(reps)?;
        Ok(encode_forward(&self.config, &self.params, reps).0)
    }

    fn check_reps(&self, reps: &[Vec<T>]) -> Result<()> {
        if reps.is_empty() {
            return Err(Error::Usage("cannot encode an empty sequence".into()));
        }
        if let Some(r) = reps.iter().find(|r| r.len() != self.config.d_model) {
            return Err(Error::Config(format!(
                "representation width {} does not match d_model {}",
                r.len(),
                self.config.d_model
            )));
        }
        Ok(())
    }

    /// Health scalar for every patch, in input order.
    pub fn predict(&self, patches: &[Patch<T>]) -> Result<Vec<T>> {
        let reps = self.representations(patches)?;
        self.encode_sequence(&reps)
    }

    pub fn forward(&self, patches: &[Patch<T>]) -> Result<(Vec<T>, SequenceCache<T>)> {
        let mut reps = Vec::with_capacity(patches.len());
        let mut embeds = Vec::with_capacity(patches.len());
        for p in patches {
            let (r, c) = embed_forward(&self.config, &self.params, p)?;
            reps.push(r);
            embeds.push(c);
        }
        self.check_reps(&reps)?;
        let (h, encoder) = encode_forward(&self.config, &self.params, &reps);
        Ok((h, SequenceCache { embeds, encoder }))
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d h`.
    pub fn backward(&self, dh: &[T], cache: &SequenceCache<T>, grads: &mut ModelParams<T>) -> Result<()> {
        if dh.len() != cache.len() {
            return Err(Error::Usage(format!(
                "output gradient has {} entries but the cached pass produced {}",
                dh.len(),
                cache.len()
            )));
        }
        let dreps = encode_backward(&self.config, &self.params, &cache.encoder, dh, grads);
        for (c, dr) in cache.embeds.iter().zip(&dreps) {
            embed_backward(&self.config, &self.params, c, dr, grads)?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> ModelParams<T> {
        self.params.zeros_like()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }
}
