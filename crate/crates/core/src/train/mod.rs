//! Degradation loss, batch assembly, optimizer and the training loop.

pub mod adamw;
pub mod batch;
pub mod config;
pub mod loss;

use std::io::Write;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CellRecords, Patch, PatchConfig};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Model, ModelConfig, ModelParams};
use crate::scalar::Scalar;

pub use adamw::{adamw_step, AdamW, OptimizerState};
pub use batch::assemble_batch;
pub use config::TrainConfig;
pub use loss::{degradation_loss, pair_loss};

pub const FINAL_CHECKPOINT: &str = "model.dssl";

/// RNG for one epoch: the run seed with the epoch as stream id.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Mean per-pair loss of one sequence and its gradient with respect to `h`.
fn sequence_loss<T: Scalar>(h: &[T], tau: T) -> Result<(T, Vec<T>)> {
    let (sum, mut grad) = degradation_loss(h, tau)?;
    let pairs = T::from_usize_lossy(h.len() - 1);
    grad.iter_mut().for_each(|g| *g = *g / pairs);
    Ok((sum / pairs, grad))
}

/// Mean over sequences of the mean per-pair loss, without gradients.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &[Vec<Patch<T>>], tau: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("batch has no usable sequences".into()));
    }
    let mut total = 0.0;
    for seq in batch {
        let h = model.predict(seq)?;
        total += sequence_loss(&h, T::lit(tau))?.0.as_f64();
    }
    Ok(total / batch.len() as f64)
}

/// Forward and backward over a batch; gradients are written into `grads`
/// (which is zeroed first). Returns the mean loss.
pub fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    batch: &[Vec<Patch<T>>],
    tau: f64,
    grads: &mut ModelParams<T>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("batch has no usable sequences".into()));
    }
    grads.fill_zero();
    let n_seq = T::from_usize_lossy(batch.len());
    let mut total = 0.0;
    for seq in batch {
        let (h, cache) = model.forward(seq)?;
        let (loss, mut dh) = sequence_loss(&h, T::lit(tau))?;
        dh.iter_mut().for_each(|g| *g = *g / n_seq);
        model.backward(&dh, &cache, grads)?;
        total += loss.as_f64();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: Vec<EpochLoss>,
}

/// Full-batch training: every epoch assembles one sequence per cell, takes
/// one AdamW step and records the mean loss.
///
/// Checkpoints go to `checkpoint_dir` every `checkpoint_every` epochs
/// (`epoch_XXXXX.dssl`) and at the end (`model.dssl`). A non-finite loss
/// stops training with an error; checkpoints already written are kept.
pub fn train<T: Scalar>(
    cells: &[CellRecords],
    model_cfg: &ModelConfig,
    patch_cfg: &PatchConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if patch_cfg.window_len != model_cfg.window_len {
        return Err(Error::Config(format!(
            "patch window {} differs from model window {}",
            patch_cfg.window_len, model_cfg.window_len
        )));
    }
    let mut model = Model::init(model_cfg.clone(), cfg.seed)?;
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(&model.params);
    let mut grads = model.zero_grads();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let batch = assemble_batch(cells, cfg.seq_len, patch_cfg, &mut rng)?;
        let loss = batch_gradient(&model, &batch, cfg.tau, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
        }
        adamw_step(&mut model.params, &grads, &mut state, &opt)?;
        history.push(EpochLoss { epoch, mean_loss: loss });
        if epoch % 10 == 0 {
            info!("epoch {epoch}: loss {loss:.5}");
        }
        if let Some(dir) = checkpoint_dir {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                checkpoint::save(&dir.join(format!("epoch_{:05}.dssl", epoch + 1)), &model.params)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        checkpoint::save(&dir.join(FINAL_CHECKPOINT), &model.params)?;
    }
    Ok(TrainOutcome { model, history })
}

pub fn write_loss_history<W: Write>(writer: W, history: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "mean_loss"])?;
    for e in history {
        w.write_record([e.epoch.to_string(), e.mean_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
