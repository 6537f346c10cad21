//! Synthetic cell fleet with known capacity fade.
//!
//! Each cell discharges through a random pulsed current profile. Terminal
//! voltage is a fixed open-circuit curve of state of charge plus the IR drop
//! through an internal resistance that grows as capacity fades.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::record::{CapacityTable, CellRecords, CycleRecord};
use crate::error::{Error, Result};

pub const NOMINAL_CAPACITY_AH: f64 = 5.0;
pub const BASE_RESISTANCE_OHM: f64 = 0.02;
pub const CYCLE_DURATION_S: f64 = 3600.0;
pub const MEAN_DISCHARGE_A: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticFleetConfig {
    pub n_cells: usize,
    pub cycles_per_cell: usize,
    pub samples_per_cycle: usize,
    pub fade_rate: f64,
    pub fade_exponent: f64,
    pub resistance_growth: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticFleetConfig {
    fn default() -> Self {
        Self {
            n_cells: 8,
            cycles_per_cell: 60,
            samples_per_cycle: 512,
            fade_rate: 0.003,
            fade_exponent: 1.0,
            resistance_growth: 0.03,
            noise_std: 0.002,
            seed: 7,
        }
    }
}

impl SyntheticFleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.cycles_per_cell == 0 {
            return Err(Error::Config("n_cells and cycles_per_cell must be at least 1".into()));
        }
        if self.samples_per_cycle < 2 {
            return Err(Error::Config("samples_per_cycle must be at least 2".into()));
        }
        if !(self.fade_rate > 0.0 && self.fade_rate.is_finite()) {
            return Err(Error::Config(format!("fade_rate must be positive, got {}", self.fade_rate)));
        }
        if !(self.fade_exponent > 0.0 && self.fade_exponent.is_finite()) {
            return Err(Error::Config(format!("fade_exponent must be positive, got {}", self.fade_exponent)));
        }
        if !(self.resistance_growth >= 0.0 && self.resistance_growth.is_finite()) {
            return Err(Error::Config("resistance_growth must be non-negative".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        let last = (self.cycles_per_cell - 1) as f64;
        let remaining = 1.0 - self.fade_rate * last.powf(self.fade_exponent);
        if remaining <= 0.0 {
            return Err(Error::Config(format!(
                "fade parameters exhaust capacity before cycle {}",
                self.cycles_per_cell - 1
            )));
        }
        Ok(())
    }

    pub fn sample_period_s(&self) -> f64 {
        CYCLE_DURATION_S / self.samples_per_cycle as f64
    }

    /// Remaining fraction of initial capacity at cycle `j`.
    pub fn retention(&self, j: usize) -> f64 {
        1.0 - self.fade_rate * (j as f64).powf(self.fade_exponent)
    }
}

/// Hidden per-cell parameters of the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTruth {
    pub cell_id: String,
    pub initial_capacity_ah: f64,
    pub initial_resistance_ohm: f64,
}

impl CellTruth {
    pub fn capacity(&self, cfg: &SyntheticFleetConfig, j: usize) -> f64 {
        self.initial_capacity_ah * cfg.retention(j)
    }

    pub fn resistance(&self, cfg: &SyntheticFleetConfig, j: usize) -> f64 {
        self.initial_resistance_ohm + cfg.resistance_growth * (self.initial_capacity_ah - self.capacity(cfg, j))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFleet {
    pub cells: Vec<CellRecords>,
    pub capacity: CapacityTable,
    pub truth: Vec<CellTruth>,
}

/// Open-circuit voltage as a cubic in state of charge (3.0 V empty, 4.2 V full).
pub fn open_circuit_voltage(soc: f64) -> f64 {
    let s = soc.clamp(0.0, 1.0);
    3.0 + s * (1.8 + s * (-1.4 + s * 0.8))
}

fn pulsed_profile<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut current = Vec::with_capacity(n + 24);
    while current.len() < n {
        let duration = rng.random_range(4..=24usize);
        let amplitude = rng.random_range(0.2..1.0);
        current.extend(std::iter::repeat_n(-amplitude, duration));
    }
    current.truncate(n);
    let mean = -current.iter().sum::<f64>() / n as f64;
    let scale = MEAN_DISCHARGE_A / mean;
    current.iter_mut().for_each(|i| *i *= scale);
    current
}

pub fn generate_synthetic_fleet(cfg: &SyntheticFleetConfig) -> Result<SyntheticFleet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let dt = cfg.sample_period_s();
    let n = cfg.samples_per_cycle;

    let mut cells = Vec::with_capacity(cfg.n_cells);
    let mut capacity = CapacityTable::new();
    let mut truth = Vec::with_capacity(cfg.n_cells);
    for k in 0..cfg.n_cells {
        let cell = CellTruth {
            cell_id: format!("cell{k:02}"),
            initial_capacity_ah: NOMINAL_CAPACITY_AH * (1.0 + 0.04 * rng.random_range(-1.0..1.0)),
            initial_resistance_ohm: BASE_RESISTANCE_OHM * (1.0 + 0.2 * rng.random_range(-1.0..1.0)),
        };
        let mut cycles = Vec::with_capacity(cfg.cycles_per_cell);
        for j in 0..cfg.cycles_per_cell {
            let q = cell.capacity(cfg, j);
            let r = cell.resistance(cfg, j);
            let current = pulsed_profile(&mut rng, n);
            let mut discharged_ah = 0.0;
            let voltage = current
                .iter()
                .map(|&i| {
                    discharged_ah += -i * dt / 3600.0;
                    let v = open_circuit_voltage(1.0 - discharged_ah / q) + i * r;
                    match &noise {
                        Some(d) => v + d.sample(&mut rng),
                        None => v,
                    }
                })
                .collect();
            capacity.insert(cell.cell_id.clone(), j, q);
            cycles.push(CycleRecord::new(cell.cell_id.clone(), j, dt, voltage, current)?);
        }
        cells.push(CellRecords::new(cell.cell_id.clone(), cycles)?);
        truth.push(cell);
    }
    Ok(SyntheticFleet { cells, capacity, truth })
}
