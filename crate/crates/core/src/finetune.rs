//! Capacity regression on top of the embedding network.
//!
//! The regressor is the embedding network followed by a dense map from the
//! representation to capacity. Embedding weights come from a pretrained
//! degradation model when one is given, otherwise from a seeded
//! initialisation; they are trained together with the new head.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CapacityTable, CellRecords, CycleRecord, PatchConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::{mean, std_dev};
use crate::nn::params::{embedding_layout, Init, TensorSpec};
use crate::nn::{embed, embed_backward, embed_forward, ModelConfig, ModelParams, Tensor};
use crate::scalar::Scalar;
use crate::train::{adamw_step, AdamW, OptimizerState};

pub const REGRESSOR_WEIGHT: &str = "regressor.weight";
pub const REGRESSOR_BIAS: &str = "regressor.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityLabel {
    pub cell_id: String,
    pub cycle_index: usize,
    pub capacity_ah: f64,
}

/// Huber loss of `pred - target` and its derivative with respect to `pred`.
pub fn huber_loss<T: Scalar>(pred: T, target: T, delta: T) -> (T, T) {
    let r = pred - target;
    let a = num_traits::Float::abs(r);
    if a <= delta {
        (T::lit(0.5) * r * r, r)
    } else {
        (delta * (a - T::lit(0.5) * delta), delta * num_traits::Float::signum(r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub huber_delta: f64,
    pub max_epochs: usize,
    /// Width of the moving average used by the stopping rule.
    pub plateau_window: usize,
    /// Training stops once the moving average improves by less than this fraction.
    pub min_improvement: f64,
    /// Training labels are kept on every this-many-th cycle.
    pub label_stride: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            huber_delta: 1.0,
            max_epochs: 2000,
            plateau_window: 50,
            min_improvement: 1e-3,
            label_stride: 10,
            n_draws: 10,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.huber_delta.is_nan() || self.huber_delta <= 0.0 {
            return Err(Error::Config(format!("huber_delta must be positive, got {}", self.huber_delta)));
        }
        if self.plateau_window == 0 || self.n_draws == 0 || self.label_stride == 0 {
            return Err(Error::Config("plateau_window, n_draws and label_stride must be at least 1".into()));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Pretrained,
    Scratch,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Pretrained => "pretrained",
            InitMode::Scratch => "scratch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityPrediction {
    pub cell_id: String,
    pub cycle_index: usize,
    pub capacity_true_ah: f64,
    pub capacity_pred_mean_ah: f64,
    pub capacity_pred_std_ah: f64,
    pub init_mode: InitMode,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    pub params: ModelParams<T>,
    pub loss_history: Vec<f64>,
    pub predictions: Vec<CapacityPrediction>,
}

impl<T> FinetuneOutcome<T> {
    pub fn test_mae(&self) -> f64 {
        mean(&self.predictions.iter().map(|p| (p.capacity_pred_mean_ah - p.capacity_true_ah).abs()).collect::<Vec<_>>())
    }

    pub fn mean_pred_std(&self) -> f64 {
        mean(&self.predictions.iter().map(|p| p.capacity_pred_std_ah).collect::<Vec<_>>())
    }
}

/// Embedding layout plus the regression head.
pub fn regressor_layout(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = embedding_layout(cfg);
    specs.push(TensorSpec { name: REGRESSOR_WEIGHT.into(), shape: vec![cfg.d_model], init: Init::Zeros });
    specs.push(TensorSpec { name: REGRESSOR_BIAS.into(), shape: vec![1], init: Init::Zeros });
    specs
}

/// Regressor parameters: embedding from `pretrained` (validated) or seeded,
/// zero head weight and the head bias at `bias`.
pub fn init_regressor<T: Scalar>(
    cfg: &ModelConfig,
    pretrained: Option<&ModelParams<T>>,
    seed: u64,
    bias: f64,
) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let layout = regressor_layout(cfg);
    let mut params = match pretrained {
        Some(p) => {
            let mut emb = p.subset("embed.");
            emb.validate_layout(&embedding_layout(cfg))?;
            emb.insert(REGRESSOR_WEIGHT, Tensor::zeros(&[cfg.d_model]));
            emb.insert(REGRESSOR_BIAS, Tensor::zeros(&[1]));
            emb
        }
        None => ModelParams::from_layout(&layout, seed),
    };
    params.get_mut(REGRESSOR_BIAS).data_mut()[0] = T::lit(bias);
    params.validate_layout(&layout)?;
    Ok(params)
}

fn labelled<'a>(cells: &'a [CellRecords], labels: &CapacityTable, window: usize) -> Vec<(&'a CycleRecord, f64)> {
    let mut out = Vec::new();
    for cell in cells {
        for (c, q) in labels.for_cell(&cell.cell_id) {
            match cell.cycle(c) {
                Some(rec) if rec.len() >= window => out.push((rec, q)),
                Some(_) => warn!("cycle {}/{c} is shorter than the window; skipped", cell.cell_id),
                None => warn!("label for missing cycle {}/{c} skipped", cell.cell_id),
            }
        }
    }
    out
}

fn regress<T: Scalar>(params: &ModelParams<T>, rep: &[T]) -> T {
    crate::nn::ops::dot(rep, params.get(REGRESSOR_WEIGHT).data()) + params.get(REGRESSOR_BIAS).data()[0]
}

/// Trains the regressor on the labelled cycles of `train_cells` and
/// predicts every labelled cycle of `test_cells`.
///
/// Each epoch draws one fresh window per labelled cycle and takes one AdamW
/// step on the mean Huber loss. Training stops at `max_epochs` or once the
/// mean loss of the last `plateau_window` epochs is less than
/// `min_improvement` (relative) below that of the window before it.
#[allow(clippy::too_many_arguments)]
pub fn finetune_capacity<T: Scalar>(
    train_cells: &[CellRecords],
    train_labels: &CapacityTable,
    test_cells: &[CellRecords],
    test_labels: &CapacityTable,
    model_cfg: &ModelConfig,
    patch_cfg: &PatchConfig,
    pretrained: Option<&ModelParams<T>>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>> {
    cfg.validate()?;
    let train_set = labelled(train_cells, train_labels, patch_cfg.window_len);
    if train_set.is_empty() {
        return Err(Error::Data("no labelled training cycles".into()));
    }
    let label_mean = mean(&train_set.iter().map(|(_, q)| *q).collect::<Vec<_>>());
    let mut params = init_regressor(model_cfg, pretrained, cfg.seed, label_mean)?;
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(&params);
    let mut grads = params.zeros_like();
    let delta = T::lit(cfg.huber_delta);
    let n = T::from_usize_lossy(train_set.len());
    let w = cfg.plateau_window;
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        grads.fill_zero();
        let mut total = 0.0;
        for (rec, q) in &train_set {
            let patch = patch_cfg.sample::<T, _>(rec, &mut rng)?;
            let (rep, cache) = embed_forward(model_cfg, &params, &patch)?;
            let pred = regress(&params, &rep);
            let (loss, g) = huber_loss(pred, T::lit(*q), delta);
            let g = g / n;
            total += loss.as_f64();
            let wr = params.get(REGRESSOR_WEIGHT).data();
            let drep: Vec<T> = wr.iter().map(|&wi| wi * g).collect();
            for (dw, &r) in grads.get_mut(REGRESSOR_WEIGHT).data_mut().iter_mut().zip(&rep) {
                *dw = *dw + g * r;
            }
            let db = grads.get_mut(REGRESSOR_BIAS).data_mut();
            db[0] = db[0] + g;
            embed_backward(model_cfg, &params, &cache, &drep, &mut grads)?;
        }
        let loss = total / train_set.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("fine-tuning loss became non-finite at epoch {epoch}")));
        }
        adamw_step(&mut params, &grads, &mut state, &opt)?;
        history.push(loss);
        if history.len() >= 2 * w {
            let recent = mean(&history[history.len() - w..]);
            let before = mean(&history[history.len() - 2 * w..history.len() - w]);
            if before - recent < cfg.min_improvement * before {
                info!("fine-tuning converged after {} epochs", epoch + 1);
                break;
            }
        }
    }

    let mode = if pretrained.is_some() { InitMode::Pretrained } else { InitMode::Scratch };
    let predictions =
        predict_capacity(&params, model_cfg, patch_cfg, test_cells, test_labels, cfg.n_draws, cfg.seed, mode)?;
    Ok(FinetuneOutcome { params, loss_history: history, predictions })
}

/// Mean and spread of predicted capacity over `n_draws` windows per labelled cycle.
#[allow(clippy::too_many_arguments)]
pub fn predict_capacity<T: Scalar>(
    params: &ModelParams<T>,
    model_cfg: &ModelConfig,
    patch_cfg: &PatchConfig,
    cells: &[CellRecords],
    labels: &CapacityTable,
    n_draws: usize,
    seed: u64,
    mode: InitMode,
) -> Result<Vec<CapacityPrediction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for (rec, q) in labelled(cells, labels, patch_cfg.window_len) {
        let preds = (0..n_draws)
            .map(|_| {
                let p = patch_cfg.sample::<T, _>(rec, &mut rng)?;
                Ok(regress(params, &embed(model_cfg, params, &p)?).as_f64())
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(CapacityPrediction {
            cell_id: rec.cell_id.clone(),
            cycle_index: rec.cycle_index,
            capacity_true_ah: q,
            capacity_pred_mean_ah: mean(&preds),
            capacity_pred_std_ah: std_dev(&preds),
            init_mode: mode,
        });
    }
    Ok(out)
}

pub fn write_predictions_csv<W: std::io::Write>(writer: W, rows: &[CapacityPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_fleet, split_holdout, Preprocess, SyntheticFleetConfig};
    use crate::nn::EmbeddingKind;

    #[test]
    fn huber_branches() {
        assert_eq!(huber_loss(0.0, 0.0, 1.0), (0.0, 0.0));
        assert_eq!(huber_loss(1.5, 1.0, 1.0), (0.125, 0.5));
        assert_eq!(huber_loss(3.0, 1.0, 1.0), (1.5, 1.0));
        assert_eq!(huber_loss(-1.0, 1.0, 1.0), (1.5, -1.0));
    }

    #[test]
    fn huber_gradient_is_continuous_and_bounded() {
        for &r in &[-3.0, -1.001, -0.999, -0.2, 0.0, 0.4, 0.9999, 1.0001, 7.0f64] {
            let step = 1e-6;
            let (_, g) = huber_loss(r, 0.0, 1.0);
            let fd = (huber_loss(r + step, 0.0, 1.0).0 - huber_loss(r - step, 0.0, 1.0).0) / (2.0 * step);
            assert!((fd - g).abs() < 1e-8, "{r}: {fd} vs {g}");
            assert!(g.abs() <= 1.0);
        }
        let left: f64 = huber_loss(1.0 - 1e-12, 0.0, 1.0).1;
        let right = huber_loss(1.0 + 1e-12, 0.0, 1.0).1;
        assert!((left - right).abs() < 1e-11);
    }

    fn setup() -> (Vec<CellRecords>, Vec<CellRecords>, CapacityTable, ModelConfig, PatchConfig) {
        let fleet_cfg =
            SyntheticFleetConfig { n_cells: 3, cycles_per_cell: 20, samples_per_cycle: 64, ..Default::default() };
        let fleet = generate_synthetic_fleet(&fleet_cfg).unwrap();
        let (train, test) = split_holdout(&fleet.cells, 1);
        let model = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            conv_channels: vec![4],
            inception_kernels: vec![3],
            window_len: 32,
            mlp_ratio: 2.0,
            embedding: EmbeddingKind::Conv,
        };
        let patch = PatchConfig { window_len: 32, preprocess: Preprocess::None, ..Default::default() };
        (train, test, fleet.capacity, model, patch)
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let (train, test, capacity, model, patch) = setup();
        let mut constant = CapacityTable::new();
        for (id, c, _) in capacity.iter() {
            constant.insert(id, c, 4.2);
        }
        let cfg = FinetuneConfig { max_epochs: 30, ..Default::default() };
        let out: FinetuneOutcome<f64> =
            finetune_capacity(&train, &constant.thinned(10), &test, &constant, &model, &patch, None, &cfg).unwrap();
        assert!(out.test_mae() < 1e-2, "{}", out.test_mae());
        assert_eq!(out.predictions.len(), 20);
    }

    #[test]
    fn scratch_runs_are_bit_reproducible() {
        let (train, test, capacity, model, patch) = setup();
        let cfg = FinetuneConfig { max_epochs: 10, seed: 3, ..Default::default() };
        let run = || {
            finetune_capacity::<f32>(&train, &capacity.thinned(10), &test, &capacity, &model, &patch, None, &cfg)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn pretrained_embedding_is_copied() {
        let (_, _, _, model, _) = setup();
        let full: ModelParams<f64> = ModelParams::init(&model, 9).unwrap();
        let reg = init_regressor(&model, Some(&full), 0, 4.5).unwrap();
        assert_eq!(reg.get("embed.block0.branch0.weight"), full.get("embed.block0.branch0.weight"));
        assert!(!reg.contains("head.weight"));
        assert_eq!(reg.get(REGRESSOR_BIAS).data(), &[4.5]);
        let other = ModelConfig { conv_channels: vec![5], ..model };
        assert_eq!(init_regressor(&other, Some(&full), 0, 0.0).unwrap_err().exit_code(), 2);
    }
}
