use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::record::CycleRecord;
use crate::error::{Error, Result};
use crate::ewt;
use crate::scalar::Scalar;

pub const DEFAULT_WINDOW_LEN: usize = 3600;
pub const DEFAULT_CURRENT_SCALE_A: f64 = 5.0;

/// Fixed-length two-channel window: row 0 preprocessed voltage, row 1 scaled current.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub cell_id: String,
    pub cycle_index: usize,
    pub source_offset: usize,
    window_len: usize,
    channels: Vec<T>,
}

impl<T: Scalar> Patch<T> {
    pub fn new(
        cell_id: impl Into<String>,
        cycle_index: usize,
        source_offset: usize,
        voltage: Vec<T>,
        current: Vec<T>,
    ) -> Result<Self> {
        let window_len = voltage.len();
        if window_len == 0 || current.len() != window_len {
            return Err(Error::Data(format!(
                "patch rows must be equal and non-empty ({} vs {})",
                window_len,
                current.len()
            )));
        }
        let mut channels = voltage;
        channels.extend(current);
        if channels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("patch contains non-finite values".into()));
        }
        Ok(Self { cell_id: cell_id.into(), cycle_index, source_offset, window_len, channels })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn voltage(&self) -> &[T] {
        &self.channels[..self.window_len]
    }

    pub fn current(&self) -> &[T] {
        &self.channels[self.window_len..]
    }

    /// Row-major `2 x L` matrix.
    pub fn channels(&self) -> &[T] {
        &self.channels
    }

    /// Same patch with the time axis reversed.
    pub fn reversed(&self) -> Self {
        let mut v = self.voltage().to_vec();
        let mut i = self.current().to_vec();
        v.reverse();
        i.reverse();
        Self { channels: [v, i].concat(), ..self.clone() }
    }
}

/// Voltage preprocessing applied to every sampled window.
pub trait Detrender<T> {
    fn detrend(&self, voltage: &[T]) -> Result<Vec<T>>;
}

impl<T, F> Detrender<T> for F
where
    F: Fn(&[T]) -> Result<Vec<T>>,
{
    fn detrend(&self, voltage: &[T]) -> Result<Vec<T>> {
        self(voltage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preprocess {
    /// Subtract the lowest EWT mode.
    Detrend { n_modes: usize, gamma: f64 },
    /// Raw voltage.
    None,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess::Detrend { n_modes: ewt::DEFAULT_DETREND_MODES, gamma: ewt::DEFAULT_GAMMA }
    }
}

impl<T: Scalar> Detrender<T> for Preprocess {
    fn detrend(&self, voltage: &[T]) -> Result<Vec<T>> {
        match *self {
            Preprocess::Detrend { n_modes, gamma } => ewt::detrend(voltage, n_modes, T::lit(gamma)),
            Preprocess::None => Ok(voltage.to_vec()),
        }
    }
}

/// Window length, current scale and voltage preprocessing used to build patches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub window_len: usize,
    pub current_scale: f64,
    pub preprocess: Preprocess,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            current_scale: DEFAULT_CURRENT_SCALE_A,
            preprocess: Preprocess::default(),
        }
    }
}

impl PatchConfig {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, cycle: &CycleRecord, rng: &mut R) -> Result<Patch<T>> {
        sample_patch(cycle, self.window_len, self.current_scale, &self.preprocess, rng)
    }

    pub fn at<T: Scalar>(&self, cycle: &CycleRecord, offset: usize) -> Result<Patch<T>> {
        patch_at(cycle, self.window_len, offset, self.current_scale, &self.preprocess)
    }
}

/// Extracts the window starting at `offset`.
pub fn patch_at<T: Scalar, D: Detrender<T> + ?Sized>(
    cycle: &CycleRecord,
    window_len: usize,
    offset: usize,
    current_scale: f64,
    detrender: &D,
) -> Result<Patch<T>> {
    if window_len == 0 || offset + window_len > cycle.len() {
        return Err(Error::Window {
            cell_id: cycle.cell_id.clone(),
            cycle_index: cycle.cycle_index,
            needed: offset + window_len,
            available: cycle.len(),
        });
    }
    let range = offset..offset + window_len;
    let raw_v: Vec<T> = cycle.voltage[range.clone()].iter().map(|&v| T::lit(v)).collect();
    let scale = T::lit(current_scale);
    let current: Vec<T> = cycle.current[range].iter().map(|&i| T::lit(i) / scale).collect();
    let voltage = detrender.detrend(&raw_v)?;
    Patch::new(cycle.cell_id.clone(), cycle.cycle_index, offset, voltage, current)
}

/// Draws a window with a uniformly random start in `[0, len - L]`.
pub fn sample_patch<T: Scalar, D: Detrender<T> + ?Sized, R: Rng + ?Sized>(
    cycle: &CycleRecord,
    window_len: usize,
    current_scale: f64,
    detrender: &D,
    rng: &mut R,
) -> Result<Patch<T>> {
    if window_len == 0 || window_len > cycle.len() {
        return Err(Error::Window {
            cell_id: cycle.cell_id.clone(),
            cycle_index: cycle.cycle_index,
            needed: window_len,
            available: cycle.len(),
        });
    }
    let offset = rng.random_range(0..=cycle.len() - window_len);
    patch_at(cycle, window_len, offset, current_scale, detrender)
}
