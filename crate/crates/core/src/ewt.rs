//! Empirical wavelet transform.
//!
//! The Fourier magnitude spectrum is segmented at midpoints between its
//! largest interior local maxima. Each segment gets a Meyer-style mask with
//! polynomial transitions, and masks sum to one everywhere on `[0, pi]`, so
//! the extracted modes add back to the input signal.

use num_traits::Float;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_DETREND_MODES: usize = 3;

/// Ascending normalized angular frequencies `0 = w_0 < ... < w_N = pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumBoundaries<T> {
    omegas: Vec<T>,
}

impl<T: Scalar> SpectrumBoundaries<T> {
    pub fn new(omegas: Vec<T>) -> Result<Self> {
        if omegas.len() < 2 {
            return Err(Error::Config("boundaries need at least two points".into()));
        }
        let pi = T::PI();
        let first = omegas[0];
        let last = *omegas.last().unwrap();
        if first != T::zero() || Float::abs(last - pi) > T::epsilon() * pi {
            return Err(Error::Config(format!("boundaries must start at 0 and end at pi, got {first} .. {last}")));
        }
        if omegas.windows(2).any(|w| w[0].is_nan() || w[1].is_nan() || w[0] >= w[1]) {
            return Err(Error::Config("boundaries must be strictly ascending".into()));
        }
        Ok(Self { omegas })
    }

    /// Boundaries for a single mode covering the whole spectrum.
    pub fn whole() -> Self {
        Self { omegas: vec![T::zero(), T::PI()] }
    }

    pub fn n_modes(&self) -> usize {
        self.omegas.len() - 1
    }

    pub fn omegas(&self) -> &[T] {
        &self.omegas
    }

    /// Largest admissible transition ratio: `min_k (w_{k+1} - w_k) / (w_{k+1} + w_k)`.
    pub fn max_gamma(&self) -> T {
        self.omegas.windows(2).map(|w| (w[1] - w[0]) / (w[1] + w[0])).fold(T::one(), T::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwtDecomposition<T> {
    pub boundaries: SpectrumBoundaries<T>,
    pub modes: Vec<Vec<T>>,
}

fn check_finite<T: Scalar>(signal: &[T]) -> Result<()> {
    match signal.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite sample at index {i}"))),
        None => Ok(()),
    }
}

fn forward_fft<T: Scalar>(signal: &[T]) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = signal.iter().map(|&re| Complex::new(re, T::zero())).collect();
    FftPlanner::<T>::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse_real<T: Scalar>(mut spectrum: Vec<Complex<T>>) -> Vec<T> {
    let n = spectrum.len();
    FftPlanner::<T>::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = T::one() / T::from_usize_lossy(n);
    spectrum.into_iter().map(|c| c.re * scale).collect()
}

/// Magnitude of the DFT on bins `0..=floor(n/2)`; bin `b` sits at `pi * b / floor(n/2)`.
pub fn fourier_magnitude<T: Scalar>(signal: &[T]) -> Result<Vec<T>> {
    if signal.len() < 4 {
        return Err(Error::Numeric(format!("spectrum needs at least 4 samples, got {}", signal.len())));
    }
    check_finite(signal)?;
    let half = signal.len() / 2;
    Ok(forward_fft(signal)[..=half].iter().map(|c| c.norm()).collect())
}

/// Picks the `n_modes` largest interior local maxima of `spectrum` (bin 0
/// excluded) and places boundaries at the midpoints between neighbours.
///
/// Maxima below `sqrt(eps)` times the spectrum peak are treated as rounding
/// noise, which keeps the result invariant to rescaling the spectrum.
pub fn detect_boundaries<T: Scalar>(spectrum: &[T], n_modes: usize) -> Result<SpectrumBoundaries<T>> {
    if n_modes == 0 {
        return Err(Error::Config("n_modes must be at least 1".into()));
    }
    if n_modes == 1 {
        return Ok(SpectrumBoundaries::whole());
    }
    if spectrum.len() < 3 {
        return Err(Error::Degenerate { requested: n_modes, found: 0 });
    }
    let top = spectrum.iter().copied().fold(T::zero(), T::max);
    let floor = top * T::epsilon().sqrt();
    let mut maxima: Vec<usize> = (1..spectrum.len() - 1)
        .filter(|&b| spectrum[b] > spectrum[b - 1] && spectrum[b] > spectrum[b + 1] && spectrum[b] > floor)
        .collect();
    if maxima.len() < n_modes {
        return Err(Error::Degenerate { requested: n_modes, found: maxima.len() });
    }
    // Stable sort keeps the lower-frequency bin first on ties.
    maxima.sort_by(|&a, &b| spectrum[b].partial_cmp(&spectrum[a]).unwrap());
    maxima.truncate(n_modes);
    maxima.sort_unstable();

    let last_bin = T::from_usize_lossy(spectrum.len() - 1);
    let two = T::lit(2.0);
    let mut omegas = Vec::with_capacity(n_modes + 1);
    omegas.push(T::zero());
    for pair in maxima.windows(2) {
        let mid = T::from_usize_lossy(pair[0] + pair[1]) / two;
        omegas.push(T::PI() * mid / last_bin);
    }
    omegas.push(T::PI());
    SpectrumBoundaries::new(omegas)
}

/// Meyer transition polynomial `x^4 (35 - 84x + 70x^2 - 20x^3)` clamped to `[0, 1]`.
pub fn meyer_beta<T: Scalar>(x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let x2 = x * x;
    x2 * x2 * (T::lit(35.0) - T::lit(84.0) * x + T::lit(70.0) * x2 - T::lit(20.0) * x2 * x)
}

/// Amplitude-complementary filter bank over `[0, pi]`.
#[derive(Clone, Debug)]
pub struct FilterBank<T> {
    boundaries: SpectrumBoundaries<T>,
    gamma: T,
}

pub fn build_filterbank<T: Scalar>(boundaries: &SpectrumBoundaries<T>, gamma: T) -> Result<FilterBank<T>> {
    let bound = boundaries.max_gamma();
    if !(gamma > T::zero() && gamma < bound) {
        return Err(Error::Config(format!("transition ratio {gamma} outside (0, {bound}) for these boundaries")));
    }
    Ok(FilterBank { boundaries: boundaries.clone(), gamma })
}

impl<T: Scalar> FilterBank<T> {
    pub fn boundaries(&self) -> &SpectrumBoundaries<T> {
        &self.boundaries
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn n_modes(&self) -> usize {
        self.boundaries.n_modes()
    }

    // Rising edge around boundary `w`: 0 below (1-g)w, 1 above (1+g)w.
    fn rise(&self, omega: T, w: T) -> T {
        let lo = (T::one() - self.gamma) * w;
        meyer_beta((omega - lo) / (T::lit(2.0) * self.gamma * w))
    }

    /// Mask `k` evaluated at `omega` (absolute frequency, folded into `[0, pi]`).
    pub fn mask(&self, k: usize, omega: T) -> T {
        let w = self.boundaries.omegas();
        let n = self.n_modes();
        assert!(k < n, "mask index {k} out of range for {n} modes");
        let mut value = T::one();
        if k > 0 {
            value = value * self.rise(omega, w[k]);
        }
        if k + 1 < n {
            value = value * (T::one() - self.rise(omega, w[k + 1]));
        }
        value
    }

    /// All masks sampled at `points` evenly spaced frequencies from 0 to pi.
    pub fn sample(&self, points: usize) -> Vec<Vec<T>> {
        let denom = T::from_usize_lossy(points.max(2) - 1);
        (0..self.n_modes())
            .map(|k| (0..points).map(|i| self.mask(k, T::PI() * T::from_usize_lossy(i) / denom)).collect())
            .collect()
    }

    fn bin_omega(j: usize, n: usize) -> T {
        let folded = j.min(n - j);
        T::lit(2.0) * T::PI() * T::from_usize_lossy(folded) / T::from_usize_lossy(n)
    }

    /// Extracts the requested modes from a signal. Spectrum bin `j` of an
    /// `n`-point DFT is filtered at `|w| = 2 pi min(j, n-j) / n`.
    pub fn extract(&self, signal: &[T], which: &[usize]) -> Result<Vec<Vec<T>>> {
        if signal.is_empty() {
            return Err(Error::Numeric("empty signal".into()));
        }
        check_finite(signal)?;
        let n = signal.len();
        let spectrum = forward_fft(signal);
        let omegas: Vec<T> = (0..n).map(|j| Self::bin_omega(j, n)).collect();
        Ok(which
            .iter()
            .map(|&k| {
                let filtered = spectrum.iter().zip(&omegas).map(|(c, &om)| c * self.mask(k, om)).collect();
                inverse_real(filtered)
            })
            .collect())
    }

    pub fn decompose(&self, signal: &[T]) -> Result<Vec<Vec<T>>> {
        let all: Vec<usize> = (0..self.n_modes()).collect();
        self.extract(signal, &all)
    }
}

/// Full decomposition: spectrum, boundary detection, filter bank, mode extraction.
pub fn ewt_decompose<T: Scalar>(signal: &[T], n_modes: usize, gamma: T) -> Result<EwtDecomposition<T>> {
    let spectrum = fourier_magnitude(signal)?;
    let boundaries = detect_boundaries(&spectrum, n_modes)?;
    if n_modes == 1 {
        return Ok(EwtDecomposition { boundaries, modes: vec![signal.to_vec()] });
    }
    let bank = build_filterbank(&boundaries, gamma)?;
    let modes = bank.decompose(signal)?;
    Ok(EwtDecomposition { boundaries, modes })
}

/// Removes the lowest-frequency EWT mode from `signal`.
///
/// On a degenerate spectrum the mode count is lowered down to 2; if no split
/// exists even then, the signal mean is subtracted instead. `gamma` is clipped
/// to 90% of the admissible bound when the detected bands are narrow.
pub fn detrend<T: Scalar>(signal: &[T], n_modes: usize, gamma: T) -> Result<Vec<T>> {
    let spectrum = fourier_magnitude(signal)?;
    let mut n = n_modes;
    while n >= 2 {
        match detect_boundaries(&spectrum, n) {
            Ok(boundaries) => {
                let g = gamma.min(boundaries.max_gamma() * T::lit(0.9));
                let bank = build_filterbank(&boundaries, g)?;
                let trend = bank.extract(signal, &[0])?.pop().unwrap();
                return Ok(signal.iter().zip(&trend).map(|(&x, &t)| x - t).collect());
            }
            Err(Error::Degenerate { .. }) => n -= 1,
            Err(e) => return Err(e),
        }
    }
    let mean = signal.iter().copied().sum::<T>() / T::from_usize_lossy(signal.len());
    Ok(signal.iter().map(|&x| x - mean).collect())
}
