//! Correlation of estimated health with measured capacity, and the ablation harness.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CapacityTable, CellRecords, PatchConfig, Preprocess};
use crate::error::{Error, Result};
use crate::eval::health::{estimate_full_history, strided_cycles, HealthEstimate};
use crate::eval::metrics::{mean, non_increasing_fraction, pearson_r};
use crate::nn::{EmbeddingKind, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig};

/// How health is evaluated against capacity labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub stride: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { stride: super::health::DEFAULT_EVAL_STRIDE, n_draws: super::health::DEFAULT_DRAWS, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellCorrelation {
    pub cell_id: String,
    pub pearson_r: f64,
    pub non_increasing: f64,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub estimates: Vec<HealthEstimate>,
    pub cells: Vec<CellCorrelation>,
}

impl CorrelationReport {
    pub fn mean_r(&self) -> f64 {
        mean(&self.cells.iter().map(|c| c.pearson_r).collect::<Vec<_>>())
    }

    /// Non-increasing fraction pooled over all adjacent pairs of all cells.
    pub fn pooled_non_increasing(&self) -> f64 {
        let (mut good, mut total) = (0.0, 0.0);
        for c in &self.cells {
            let pairs = c.n_points.saturating_sub(1) as f64;
            good += c.non_increasing * pairs;
            total += pairs;
        }
        if total == 0.0 {
            1.0
        } else {
            good / total
        }
    }
}

/// Mean health and capacity at the labelled cycles of one cell's estimates.
pub fn paired_with_capacity(estimates: &[HealthEstimate], capacity: &CapacityTable) -> (Vec<f64>, Vec<f64>) {
    estimates.iter().filter_map(|e| capacity.get(&e.cell_id, e.cycle_index).map(|q| (e.mean_h, q))).unzip()
}

/// Full-history health on every `stride`-th cycle of each cell and its
/// Pearson correlation with capacity. Each cell gets its own RNG stream.
pub fn correlate_with_capacity<T: Scalar>(
    model: &Model<T>,
    cells: &[CellRecords],
    capacity: &CapacityTable,
    patch_cfg: &PatchConfig,
    cfg: &EvalConfig,
) -> Result<CorrelationReport> {
    let mut estimates = Vec::new();
    let mut per_cell = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let cycles = strided_cycles(cell, cfg.stride);
        let est = estimate_full_history(model, cell, &cycles, patch_cfg, cfg.n_draws, &mut rng)?;
        let (h, q) = paired_with_capacity(&est, capacity);
        match pearson_r(&h, &q) {
            Ok(r) => per_cell.push(CellCorrelation {
                cell_id: cell.cell_id.clone(),
                pearson_r: r,
                non_increasing: non_increasing_fraction(&h),
                n_points: h.len(),
            }),
            Err(e) => warn!("cell {}: {e}", cell.cell_id),
        }
        estimates.extend(est);
    }
    if per_cell.is_empty() {
        return Err(Error::UndefinedCorrelation("no cell has enough labelled cycles".into()));
    }
    Ok(CorrelationReport { estimates, cells: per_cell })
}

/// One variant of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCase {
    pub label: String,
    pub preprocess: Preprocess,
    pub embedding: EmbeddingKind,
    pub d_model: usize,
    pub n_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub case: String,
    pub pearson_r: f64,
    pub final_loss: f64,
}

/// Number of trailing epochs averaged into the reported final loss.
pub const FINAL_LOSS_EPOCHS: usize = 10;

/// The four single-switch variants of the preprocessing and embedding axes,
/// all at the base width and depth.
pub fn default_grid(base: &ModelConfig) -> Vec<AblationCase> {
    let case = |label: &str, preprocess, embedding| AblationCase {
        label: label.into(),
        preprocess,
        embedding,
        d_model: base.d_model,
        n_layers: base.n_layers,
    };
    vec![
        case("detrend", Preprocess::default(), EmbeddingKind::Conv),
        case("none", Preprocess::None, EmbeddingKind::Conv),
        case("conv", Preprocess::default(), EmbeddingKind::Conv),
        case("dense", Preprocess::default(), EmbeddingKind::Dense),
    ]
}

/// Trains every case with the same seed and reports test-cell correlation
/// and the mean loss of the final epochs. Identical configurations are
/// trained once.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<T: Scalar>(
    train_cells: &[CellRecords],
    test_cells: &[CellRecords],
    capacity: &CapacityTable,
    base_model: &ModelConfig,
    base_patch: &PatchConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    grid: &[AblationCase],
) -> Result<Vec<AblationRow>> {
    let mut done: Vec<(ModelConfig, PatchConfig, f64, f64)> = Vec::new();
    let mut rows = Vec::with_capacity(grid.len());
    for case in grid {
        let model_cfg = ModelConfig {
            embedding: case.embedding,
            d_model: case.d_model,
            n_layers: case.n_layers,
            ..base_model.clone()
        };
        let patch_cfg = PatchConfig { preprocess: case.preprocess, ..*base_patch };
        let (r, loss) = match done.iter().find(|(m, p, _, _)| *m == model_cfg && *p == patch_cfg) {
            Some(&(_, _, r, l)) => (r, l),
            None => {
                info!("ablation case '{}'", case.label);
                let out = train::<T>(train_cells, &model_cfg, &patch_cfg, train_cfg, None)?;
                let tail = &out.history[out.history.len().saturating_sub(FINAL_LOSS_EPOCHS)..];
                let loss = mean(&tail.iter().map(|e| e.mean_loss).collect::<Vec<_>>());
                let r = correlate_with_capacity(&out.model, test_cells, capacity, &patch_cfg, eval_cfg)?.mean_r();
                done.push((model_cfg, patch_cfg, r, loss));
                (r, loss)
            }
        };
        rows.push(AblationRow { case: case.label.clone(), pearson_r: r, final_loss: loss });
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: std::io::Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
