use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One discharge cycle of one cell, sampled at a fixed period.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cell_id: String,
    pub cycle_index: usize,
    pub sample_period_s: f64,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

impl CycleRecord {
    pub fn new(
        cell_id: impl Into<String>,
        cycle_index: usize,
        sample_period_s: f64,
        voltage: Vec<f64>,
        current: Vec<f64>,
    ) -> Result<Self> {
        let cell_id = cell_id.into();
        if voltage.len() != current.len() {
            return Err(Error::Data(format!(
                "cell {cell_id} cycle {cycle_index}: {} voltage vs {} current samples",
                voltage.len(),
                current.len()
            )));
        }
        if voltage.len() < 2 {
            return Err(Error::Data(format!("cell {cell_id} cycle {cycle_index}: need at least 2 samples")));
        }
        if !(sample_period_s > 0.0 && sample_period_s.is_finite()) {
            return Err(Error::Data(format!(
                "cell {cell_id} cycle {cycle_index}: sample period {sample_period_s} is not positive"
            )));
        }
        Ok(Self { cell_id, cycle_index, sample_period_s, voltage, current })
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

/// All cycles of one cell in ascending `cycle_index` order.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecords {
    pub cell_id: String,
    pub cycles: Vec<CycleRecord>,
}

impl CellRecords {
    /// Builds a cell from cycles in any order; rejects duplicate indices.
    pub fn new(cell_id: impl Into<String>, mut cycles: Vec<CycleRecord>) -> Result<Self> {
        let cell_id = cell_id.into();
        cycles.sort_by_key(|c| c.cycle_index);
        if let Some(w) = cycles.windows(2).find(|w| w[0].cycle_index == w[1].cycle_index) {
            return Err(Error::Data(format!("cell {cell_id}: duplicate cycle index {}", w[0].cycle_index)));
        }
        if let Some(c) = cycles.iter().find(|c| c.cell_id != cell_id) {
            return Err(Error::Data(format!("cycle of cell {} filed under {cell_id}", c.cell_id)));
        }
        Ok(Self { cell_id, cycles })
    }

    pub fn cycle(&self, cycle_index: usize) -> Option<&CycleRecord> {
        self.cycles.binary_search_by_key(&cycle_index, |c| c.cycle_index).ok().map(|i| &self.cycles[i])
    }

    pub fn cycle_indices(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.cycle_index).collect()
    }
}

/// Default number of held-out cells.
pub const DEFAULT_TEST_CELLS: usize = 2;

/// Splits cells (ordered by id) into training cells and the last `n_test`
/// held-out cells. At least one training cell is always kept.
pub fn split_holdout(cells: &[CellRecords], n_test: usize) -> (Vec<CellRecords>, Vec<CellRecords>) {
    let mut sorted = cells.to_vec();
    sorted.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let n_test = n_test.min(sorted.len().saturating_sub(1));
    let test = sorted.split_off(sorted.len() - n_test);
    (sorted, test)
}

/// Capacity per `(cell_id, cycle_index)`, in ampere-hours.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CapacityTable {
    entries: BTreeMap<(String, usize), f64>,
}

impl CapacityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell_id: impl Into<String>, cycle_index: usize, capacity_ah: f64) {
        self.entries.insert((cell_id.into(), cycle_index), capacity_ah);
    }

    pub fn get(&self, cell_id: &str, cycle_index: usize) -> Option<f64> {
        self.entries.get(&(cell_id.to_string(), cycle_index)).copied()
    }

    /// `(cycle_index, capacity)` pairs for one cell, ascending.
    pub fn for_cell(&self, cell_id: &str) -> Vec<(usize, f64)> {
        self.entries
            .range((cell_id.to_string(), 0)..=(cell_id.to_string(), usize::MAX))
            .map(|((_, c), &q)| (*c, q))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, f64)> {
        self.entries.iter().map(|((id, c), &q)| (id.as_str(), *c, q))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps every `stride`-th cycle of each cell (by position), starting with the first.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut out = Self::new();
        let mut current: Option<&str> = None;
        let mut pos = 0usize;
        for (id, c, q) in self.iter() {
            if current != Some(id) {
                current = Some(id);
                pos = 0;
            }
            if pos.is_multiple_of(stride) {
                out.insert(id, c, q);
            }
            pos += 1;
        }
        out
    }
}
