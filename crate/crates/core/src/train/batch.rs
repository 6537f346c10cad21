//! Per-epoch batch assembly: one chronological patch sequence per cell.

use log::warn;
use rand::seq::index::sample;
use rand::Rng;

use crate::data::{CellRecords, Patch, PatchConfig};
use crate::error::Result;
use crate::scalar::Scalar;

/// Draws up to `seq_len` distinct cycles per cell, sorts them by cycle
/// index and cuts one fresh random patch from each.
///
/// Cycles shorter than the window are ignored; cells left with fewer than
/// two usable cycles are dropped with a warning.
pub fn assemble_batch<T: Scalar, R: Rng + ?Sized>(
    cells: &[CellRecords],
    seq_len: usize,
    patch_cfg: &PatchConfig,
    rng: &mut R,
) -> Result<Vec<Vec<Patch<T>>>> {
    let mut batch = Vec::with_capacity(cells.len());
    for cell in cells {
        let usable: Vec<_> = cell.cycles.iter().filter(|c| c.len() >= patch_cfg.window_len).collect();
        if usable.len() < 2 {
            warn!("cell {} has {} usable cycles; excluded from the batch", cell.cell_id, usable.len());
            continue;
        }
        let take = seq_len.min(usable.len());
        let mut picked = sample(rng, usable.len(), take).into_vec();
        picked.sort_unstable();
        let seq = picked.into_iter().map(|i| patch_cfg.sample(usable[i], rng)).collect::<Result<Vec<_>>>()?;
        batch.push(seq);
    }
    Ok(batch)
}
