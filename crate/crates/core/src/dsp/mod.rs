//! Framing, Hann windowing, STFT / iSTFT and spectrogram masking.
//!
//! The STFT zero-pads `window_size / 2` samples on each side before framing
//! (center padding) and uses the periodic Hann window. The inverse
//! overlap-adds re-windowed frames and divides by the summed squared window,
//! which restores the input exactly up to rounding.

mod plan;
pub mod tape;

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use plan::StftPlan;

/// Sample rate used throughout the toolkit.
pub const SAMPLE_RATE: u32 = 16_000;

/// Floor applied before taking log-magnitudes.
pub const LOG_FLOOR: f64 = 1e-7;

/// Mono signal at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Waveform at [`SAMPLE_RATE`].
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_samples(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub window_fn: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            hop_size: 256,
            window_fn: WindowFn::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            window_size,
            hop_size,
            window_fn: WindowFn::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || !self.window_size.is_multiple_of(2) {
            return Err(invalid(format!(
                "window size must be even and >= 2, got {}",
                self.window_size
            )));
        }
        if self.hop_size == 0 || !self.window_size.is_multiple_of(self.hop_size) {
            return Err(invalid(format!(
                "hop size {} must be positive and divide the window size {}",
                self.hop_size, self.window_size
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frames covering `len` samples after center padding: `ceil(len / hop) + 1`.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop_size) + 1
    }

    pub fn window(&self) -> Result<Vec<f64>> {
        match self.window_fn {
            WindowFn::Hann => hann_window(self.window_size),
        }
    }
}

/// Periodic Hann window `w[k] = 0.5 (1 - cos(2 pi k / size))`.
pub fn hann_window(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(invalid(format!("window size must be >= 2, got {size}")));
    }
    Ok((0..size)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / size as f64).cos()))
        .collect())
}

/// Real-valued `(frames, bins)` grid in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            frames,
            bins,
            data: vec![value; frames * bins],
        }
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.bins + f]
    }
}

/// One-sided complex spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// `num_frames * config.num_bins()` bins, frame-major.
    pub bins: Vec<Complex64>,
    pub num_frames: usize,
    pub config: StftConfig,
    pub original_length: usize,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_frames, self.num_bins())
    }

    pub fn bin(&self, t: usize, f: usize) -> Complex64 {
        self.bins[t * self.num_bins() + f]
    }

    pub fn magnitudes(&self) -> RealGrid {
        RealGrid {
            frames: self.num_frames,
            bins: self.num_bins(),
            data: self.bins.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.bins.iter_mut().for_each(|c| *c *= factor);
        out
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    StftPlan::new(*cfg)?.stft(w)
}

pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    StftPlan::new(spec.config)?.istft(spec)
}

/// `ln(max(|bin|, floor))` for every bin.
pub fn log_magnitude(spec: &Spectrogram, floor: f64) -> Result<RealGrid> {
    if floor <= 0.0 || !floor.is_finite() {
        return Err(invalid(format!(
            "log-magnitude floor must be positive, got {floor}"
        )));
    }
    let mut g = spec.magnitudes();
    g.data.iter_mut().for_each(|m| *m = m.max(floor).ln());
    Ok(g)
}

/// Scales each complex bin by its mask value; the noisy phase is kept.
pub fn apply_mask(spec: &Spectrogram, mask: &RealGrid) -> Result<Spectrogram> {
    if (mask.frames, mask.bins) != spec.shape() {
        return Err(invalid(format!(
            "mask shape ({}, {}) does not match spectrogram {:?}",
            mask.frames,
            mask.bins,
            spec.shape()
        )));
    }
    if let Some(bad) = mask.data.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::ContractViolation(format!(
            "mask value {bad} outside [0, 1]"
        )));
    }
    let mut out = spec.clone();
    out.bins
        .iter_mut()
        .zip(&mask.data)
        .for_each(|(c, &m)| *c *= m);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_quarter_points() {
        let w = hann_window(4).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(hann_window(2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(hann_window(512).unwrap()[256], 1.0);
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(512, 256).is_ok());
        assert!(StftConfig::new(511, 256).is_err());
        assert!(StftConfig::new(512, 300).is_err());
        assert!(StftConfig::new(512, 0).is_err());
        assert_eq!(StftConfig::default().num_frames(16384), 65);
        assert_eq!(StftConfig::default().num_bins(), 257);
    }

    #[test]
    fn log_magnitude_values() {
        let cfg = StftConfig::new(4, 2).unwrap();
        let spec = Spectrogram {
            bins: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, std::f64::consts::E),
            ],
            num_frames: 1,
            config: cfg,
            original_length: 1,
        };
        let lm = log_magnitude(&spec, 1e-7).unwrap();
        assert_eq!(lm.data[0], 0.0);
        assert!((lm.data[1] - (1e-7f64).ln()).abs() < 1e-12);
        assert!((lm.data[1] + 16.118).abs() < 1e-3);
        assert!((lm.data[2] - 1.0).abs() < 1e-15);
        assert!(log_magnitude(&spec, 0.0).is_err());
    }

    #[test]
    fn mask_contracts() {
        let cfg = StftConfig::new(4, 2).unwrap();
        let spec = Spectrogram {
            bins: vec![Complex64::new(1.0, -2.0); 6],
            num_frames: 2,
            config: cfg,
            original_length: 2,
        };
        let ones = RealGrid::filled(2, 3, 1.0);
        assert_eq!(apply_mask(&spec, &ones).unwrap(), spec);
        let zeros = apply_mask(&spec, &RealGrid::filled(2, 3, 0.0)).unwrap();
        assert!(zeros.bins.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(
            apply_mask(&spec, &RealGrid::filled(2, 2, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            apply_mask(&spec, &RealGrid::filled(2, 3, 1.5)),
            Err(Error::ContractViolation(_))
        ));
    }
}
