//! Synthetic noise: high-frequency tones, a babble surrogate built from
//! modulated speech-band noise, and their equal-RMS mixture.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{invalid, Error, Result};
use crate::registry::Registry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    HighfreqSine,
    BabbleSurrogate,
    Mixture,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [Self::HighfreqSine, Self::BabbleSurrogate, Self::Mixture];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HighfreqSine => "highfreq_sine",
            Self::BabbleSurrogate => "babble_surrogate",
            Self::Mixture => "mixture",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "highfreq" => Ok(Self::HighfreqSine),
            "babble" => Ok(Self::BabbleSurrogate),
            "both" => Ok(Self::Mixture),
            _ => Self::ALL
                .into_iter()
                .find(|k| k.as_str() == s)
                .ok_or_else(|| Error::UnknownName {
                    kind: "noise kind",
                    name: s.into(),
                    available: Self::ALL.map(NoiseKind::as_str).join(", "),
                }),
        }
    }
}

fn default_band() -> (f64, f64) {
    (1000.0, 5000.0)
}

fn default_babble_band() -> (f64, f64) {
    (100.0, 4000.0)
}

fn default_tones() -> usize {
    4
}

fn default_components() -> usize {
    6
}

fn default_modulation() -> (f64, f64) {
    (2.0, 8.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthNoiseSpec {
    pub kind: NoiseKind,
    /// Tone frequency range in Hz.
    #[serde(default = "default_band")]
    pub band: (f64, f64),
    #[serde(default = "default_tones")]
    pub tones: usize,
    /// Babble pass band in Hz.
    #[serde(default = "default_babble_band")]
    pub babble_band: (f64, f64),
    /// Number of babble streams.
    #[serde(default = "default_components")]
    pub component_count: usize,
    /// Babble amplitude-modulation rate range in Hz.
    #[serde(default = "default_modulation")]
    pub modulation: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

impl SynthNoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self {
            kind,
            band: default_band(),
            tones: default_tones(),
            babble_band: default_babble_band(),
            component_count: default_components(),
            modulation: default_modulation(),
            seed,
        }
    }

    pub fn generate(&self, len: usize) -> Result<Waveform> {
        generators().create(self.kind.as_str())?.generate(self, len)
    }
}

fn check_band(band: (f64, f64), what: &str) -> Result<()> {
    let nyquist = f64::from(SAMPLE_RATE) / 2.0;
    if !(band.0 > 0.0 && band.0 < band.1 && band.1 < nyquist) {
        return Err(invalid(format!(
            "{what} band {band:?} Hz must satisfy 0 < low < high < {nyquist}"
        )));
    }
    Ok(())
}

fn unit_rms(mut v: Vec<f64>) -> Result<Waveform> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::Numeric("generated noise has zero energy".into()));
    }
    v.iter_mut().for_each(|x| *x /= rms);
    Ok(Waveform::from_samples(v))
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 {
        return Err(invalid("noise length must be positive"));
    }
    Ok(())
}

/// Produces a noise waveform of a requested length from a spec.
pub trait NoiseGenerator: Send + Sync {
    fn kind(&self) -> NoiseKind;
    fn generate(&self, spec: &SynthNoiseSpec, len: usize) -> Result<Waveform>;
}

/// Equal-amplitude tones at uniform random frequencies in the band, random
/// phases, scaled to unit RMS.
struct HighfreqSine;

impl NoiseGenerator for HighfreqSine {
    fn kind(&self) -> NoiseKind {
        NoiseKind::HighfreqSine
    }

    fn generate(&self, spec: &SynthNoiseSpec, len: usize) -> Result<Waveform> {
        check_len(len)?;
        check_band(spec.band, "tone")?;
        if spec.tones == 0 {
            return Err(invalid("need at least one tone"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let tones: Vec<(f64, f64)> = (0..spec.tones)
            .map(|_| {
                (
                    rng.gen_range(spec.band.0..spec.band.1),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let sr = f64::from(SAMPLE_RATE);
        let v = (0..len)
            .map(|i| {
                let t = i as f64 / sr;
                tones
                    .iter()
                    .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                    .sum()
            })
            .collect();
        unit_rms(v)
    }
}

/// White noise shaped by `1/sqrt(f)` inside `band` and zero outside.
fn pink_band_noise(len: usize, band: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let sr = f64::from(SAMPLE_RATE);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * sr / len as f64;
        *b *= if f >= band.0 && f <= band.1 {
            1.0 / f.sqrt()
        } else {
            0.0
        };
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

/// Sum of independent speech-band noise streams, each amplitude-modulated at
/// a syllable-like rate, scaled to unit RMS.
struct BabbleSurrogate;

impl NoiseGenerator for BabbleSurrogate {
    fn kind(&self) -> NoiseKind {
        NoiseKind::BabbleSurrogate
    }

    fn generate(&self, spec: &SynthNoiseSpec, len: usize) -> Result<Waveform> {
        check_len(len)?;
        check_band(spec.babble_band, "babble")?;
        if spec.component_count < 2 {
            return Err(invalid(format!(
                "babble needs at least 2 streams, got {}",
                spec.component_count
            )));
        }
        let (m_lo, m_hi) = spec.modulation;
        if !(m_lo > 0.0 && m_lo <= m_hi) {
            return Err(invalid(format!(
                "modulation range {:?} Hz is invalid",
                spec.modulation
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let sr = f64::from(SAMPLE_RATE);
        let mut acc = vec![0.0; len];
        for _ in 0..spec.component_count {
            let stream = pink_band_noise(len, spec.babble_band, &mut rng);
            let rate = if m_lo < m_hi {
                rng.gen_range(m_lo..m_hi)
            } else {
                m_lo
            };
            let phase = rng.gen_range(0.0..2.0 * PI);
            let gain = rng.gen_range(0.5..1.0);
            for (i, (a, s)) in acc.iter_mut().zip(&stream).enumerate() {
                let env = 0.5 * (1.0 + (2.0 * PI * rate * i as f64 / sr + phase).sin());
                *a += gain * env * s;
            }
        }
        unit_rms(acc)
    }
}

/// Babble and tones at equal RMS, rescaled to unit RMS.
struct Mixture;

impl NoiseGenerator for Mixture {
    fn kind(&self) -> NoiseKind {
        NoiseKind::Mixture
    }

    fn generate(&self, spec: &SynthNoiseSpec, len: usize) -> Result<Waveform> {
        let tones = HighfreqSine.generate(
            &SynthNoiseSpec {
                seed: spec.seed.wrapping_mul(2),
                ..spec.clone()
            },
            len,
        )?;
        let babble = BabbleSurrogate.generate(
            &SynthNoiseSpec {
                seed: spec.seed.wrapping_mul(2).wrapping_add(1),
                ..spec.clone()
            },
            len,
        )?;
        unit_rms(
            tones
                .samples
                .iter()
                .zip(&babble.samples)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

/// Generators by noise-kind name.
pub fn generators() -> Registry<Box<dyn NoiseGenerator>> {
    let mut r: Registry<Box<dyn NoiseGenerator>> = Registry::new("noise kind");
    r.register("highfreq_sine", "tones between 1 and 5 kHz", || {
        Box::new(HighfreqSine)
    });
    r.register(
        "babble_surrogate",
        "modulated speech-band noise streams",
        || Box::new(BabbleSurrogate),
    );
    r.register("mixture", "babble plus tones at equal RMS", || {
        Box::new(Mixture)
    });
    r
}
