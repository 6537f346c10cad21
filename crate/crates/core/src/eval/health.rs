//! Health-indicator inference over cell histories.

use log::warn;
use rand::Rng;
use serde::Serialize;

use crate::data::{CellRecords, CycleRecord, Patch, PatchConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::{mean, std_dev};
use crate::nn::Model;
use crate::scalar::Scalar;

pub const DEFAULT_DRAWS: usize = 10;
pub const DEFAULT_REFERENCES: usize = 10;
/// Evaluation uses every this-many-th cycle.
pub const DEFAULT_EVAL_STRIDE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HealthEstimate {
    pub cell_id: String,
    pub cycle_index: usize,
    pub mean_h: f64,
    pub std_h: f64,
    pub n_samples: usize,
}

impl HealthEstimate {
    fn from_samples(cell_id: &str, cycle_index: usize, samples: &[f64]) -> Self {
        Self {
            cell_id: cell_id.to_string(),
            cycle_index,
            mean_h: mean(samples),
            std_h: std_dev(samples),
            n_samples: samples.len(),
        }
    }
}

/// Every `stride`-th cycle index of a cell, starting with the first.
pub fn strided_cycles(cell: &CellRecords, stride: usize) -> Vec<usize> {
    cell.cycle_indices().into_iter().step_by(stride.max(1)).collect()
}

fn usable_cycles<'a>(cell: &'a CellRecords, cycles: &[usize], window_len: usize) -> Result<Vec<&'a CycleRecord>> {
    let mut out = Vec::with_capacity(cycles.len());
    for &c in cycles {
        let rec = cell.cycle(c).ok_or_else(|| Error::Data(format!("cell {} has no cycle {c}", cell.cell_id)))?;
        if rec.len() < window_len {
            warn!("cycle {}/{c} is shorter than the window; skipped", cell.cell_id);
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Scores the listed cycles as one chronological sequence, `n_draws` times
/// with fresh patches, and reports per-cycle mean and spread of `h`.
pub fn estimate_full_history<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    cell: &CellRecords,
    cycles: &[usize],
    patch_cfg: &PatchConfig,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<HealthEstimate>> {
    if n_draws == 0 {
        return Err(Error::Usage("n_draws must be at least 1".into()));
    }
    let recs = usable_cycles(cell, cycles, patch_cfg.window_len)?;
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    let mut samples = vec![Vec::with_capacity(n_draws); recs.len()];
    for _ in 0..n_draws {
        let patches = recs.iter().map(|c| patch_cfg.sample::<T, _>(c, rng)).collect::<Result<Vec<_>>>()?;
        for (s, h) in samples.iter_mut().zip(model.predict(&patches)?) {
            s.push(h.as_f64());
        }
    }
    Ok(recs.iter().zip(&samples).map(|(c, s)| HealthEstimate::from_samples(&cell.cell_id, c.cycle_index, s)).collect())
}

/// Health of `target` when encoded alongside `references`.
///
/// The target is placed first; since the encoder has no positional
/// information its placement does not affect the result.
pub fn estimate_with_references<T: Scalar>(
    model: &Model<T>,
    target: &Patch<T>,
    references: &[Patch<T>],
    expected_refs: usize,
) -> Result<T> {
    if references.len() != expected_refs {
        return Err(Error::Usage(format!("expected {expected_refs} reference segments, got {}", references.len())));
    }
    let mut seq = Vec::with_capacity(references.len() + 1);
    seq.push(target.clone());
    seq.extend_from_slice(references);
    Ok(model.predict(&seq)?[0])
}

/// Reference pool: `per_cell` evenly spaced cycles from every reference cell.
pub fn reference_pool(cells: &[CellRecords], per_cell: usize, window_len: usize) -> Vec<Vec<&CycleRecord>> {
    cells
        .iter()
        .map(|cell| {
            let usable: Vec<_> = cell.cycles.iter().filter(|c| c.len() >= window_len).collect();
            if usable.len() <= per_cell {
                return usable;
            }
            (0..per_cell).map(|k| usable[k * (usable.len() - 1) / (per_cell - 1).max(1)]).collect()
        })
        .filter(|pool: &Vec<_>| !pool.is_empty())
        .collect()
}

/// Per-cycle health of a held-out cell via the reference protocol.
///
/// For every draw and cycle, `n_refs` reference segments are drawn afresh:
/// slot `s` takes a random cycle from pool cell `s mod n_cells` and a random
/// window from it.
#[allow(clippy::too_many_arguments)]
pub fn estimate_history_with_references<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    cell: &CellRecords,
    cycles: &[usize],
    pool: &[Vec<&CycleRecord>],
    n_refs: usize,
    patch_cfg: &PatchConfig,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<HealthEstimate>> {
    if pool.is_empty() {
        return Err(Error::Data("reference pool is empty".into()));
    }
    if n_draws == 0 {
        return Err(Error::Usage("n_draws must be at least 1".into()));
    }
    let recs = usable_cycles(cell, cycles, patch_cfg.window_len)?;
    let mut out = Vec::with_capacity(recs.len());
    for rec in recs {
        let mut samples = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let target = patch_cfg.sample::<T, _>(rec, rng)?;
            let refs = (0..n_refs)
                .map(|s| {
                    let cands = &pool[s % pool.len()];
                    patch_cfg.sample::<T, _>(cands[rng.random_range(0..cands.len())], rng)
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(estimate_with_references(model, &target, &refs, n_refs)?.as_f64());
        }
        out.push(HealthEstimate::from_samples(&cell.cell_id, rec.cycle_index, &samples));
    }
    Ok(out)
}

pub fn write_health_csv<W: std::io::Write>(writer: W, rows: &[HealthEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
