//! Corpus ingestion, noise synthesis, SNR mixing, windowing and batching.

pub mod corpus;
pub mod manifest;
pub mod noise;
pub mod speech;
pub mod wav;

use crate::dsp::Waveform;
use crate::error::{invalid, Result};

pub use corpus::{Batch, Corpus, CorpusOptions, SynthCorpusSpec, TripletWindow};
pub use manifest::{Manifest, ManifestEntry, NoiseSource, Split};
pub use noise::{NoiseKind, SynthNoiseSpec};
pub use speech::synth_speech;
pub use wav::{read_wav, write_wav, WavEncoding};

pub const DEFAULT_WINDOW: usize = 16384;
pub const DEFAULT_HOP: usize = 8192;

/// Aligned noisy / clean / noise windows with `x = s + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriplet {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub n: Vec<f64>,
}

impl SampleTriplet {
    /// Builds `x = s + n`.
    pub fn from_parts(s: Vec<f64>, n: Vec<f64>) -> Result<Self> {
        if s.len() != n.len() {
            return Err(invalid(format!(
                "speech has {} samples, noise {}",
                s.len(),
                n.len()
            )));
        }
        let x = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        Ok(Self { x, s, n })
    }

    /// Noise-only version: `s = 0`, `x = n`.
    pub fn noise_only(&self) -> Self {
        Self {
            x: self.n.clone(),
            s: vec![0.0; self.n.len()],
            n: self.n.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Scales `n` so that `10 log10(Σs² / Σ(g n)²) = snr_db` and returns
/// `(s + g n, g n)`.
pub fn mix_at_snr(s: &Waveform, n: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    if s.len() != n.len() {
        return Err(invalid(format!(
            "speech has {} samples, noise {}",
            s.len(),
            n.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(invalid(format!("target SNR must be finite, got {snr_db}")));
    }
    let (es, en) = (s.energy(), n.energy());
    if !(es > 0.0) || !(en > 0.0) {
        return Err(invalid("speech and noise must both have nonzero energy"));
    }
    let gain = (es / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = n.samples.iter().map(|v| gain * v).collect();
    let x = s.samples.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    Ok((
        Waveform::new(x, s.sample_rate)?,
        Waveform::new(scaled, s.sample_rate)?,
    ))
}

/// One window cut from a longer signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub offset: usize,
    /// Samples taken from the signal; the rest are zero padding.
    pub valid_len: usize,
}

impl Window {
    pub fn padded(&self) -> bool {
        self.valid_len < self.samples.len()
    }
}

/// Number of windows: `max(1, ceil((len - window) / hop) + 1)`.
pub fn window_count(len: usize, window: usize, hop: usize) -> usize {
    if len <= window {
        1
    } else {
        (len - window).div_ceil(hop) + 1
    }
}

/// Cuts `samples` into `window`-long pieces every `hop` samples; the last
/// piece is zero-padded when it runs past the end.
pub fn slice_windows(samples: &[f64], window: usize, hop: usize) -> Result<Vec<Window>> {
    if samples.is_empty() {
        return Err(invalid("cannot window an empty signal"));
    }
    if window == 0 || hop == 0 {
        return Err(invalid("window and hop must be positive"));
    }
    Ok((0..window_count(samples.len(), window, hop))
        .map(|i| {
            let offset = i * hop;
            let valid_len = window.min(samples.len() - offset);
            let mut w = vec![0.0; window];
            w[..valid_len].copy_from_slice(&samples[offset..offset + valid_len]);
            Window {
                samples: w,
                offset,
                valid_len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_arithmetic() {
        let w = slice_windows(&vec![1.0; 16384], 16384, 8192).unwrap();
        assert_eq!(w.len(), 1);
        assert!(!w[0].padded());

        let w = slice_windows(&vec![1.0; 24576], 16384, 8192).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[1].offset, w[1].valid_len), (8192, 16384));

        let w = slice_windows(&vec![1.0; 20000], 16384, 8192).unwrap();
        assert_eq!(
            w.iter().map(|w| w.offset).collect::<Vec<_>>(),
            vec![0, 8192]
        );
        assert!(w[1].padded());
        assert_eq!(16384 - w[1].valid_len, 4576);
        assert!(w[1].samples[w[1].valid_len..].iter().all(|v| *v == 0.0));

        assert!(slice_windows(&[], 4, 2).is_err());
        assert_eq!(slice_windows(&[1.0; 3], 8, 4).unwrap().len(), 1);
    }

    #[test]
    fn mixing_gains() {
        let s = Waveform::from_samples(vec![1.0, -1.0, 1.0, -1.0]);
        let n = Waveform::from_samples(vec![1.0, 1.0, -1.0, -1.0]);
        let (_, sn) = mix_at_snr(&s, &n, 0.0).unwrap();
        assert_eq!(sn.samples, n.samples);
        let (_, sn) = mix_at_snr(&s, &n, 10.0).unwrap();
        assert!((sn.samples[0] - 10f64.powf(-0.5)).abs() < 1e-15);
        let (_, sn) = mix_at_snr(&s, &n, -10.0).unwrap();
        assert!((sn.samples[0] - 10f64.powf(0.5)).abs() < 1e-14);
        assert!(mix_at_snr(&Waveform::zeros(4), &n, 0.0).is_err());
        assert!(mix_at_snr(&s, &Waveform::zeros(3), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn windows_cover_signal(len in 1usize..5000, window in 1usize..600, hop_frac in 1usize..=4) {
            let hop = (window / hop_frac).max(1);
            let data: Vec<f64> = (0..len).map(|i| i as f64 + 1.0).collect();
            let ws = slice_windows(&data, window, hop).unwrap();
            prop_assert_eq!(ws.len(), window_count(len, window, hop));
            let last = ws.last().unwrap();
            prop_assert!(last.offset + last.valid_len == len || len <= window);
            for w in &ws {
                prop_assert_eq!(&w.samples[..w.valid_len], &data[w.offset..w.offset + w.valid_len]);
            }
            prop_assert!(ws.iter().rev().skip(1).all(|w| !w.padded()));
        }

        #[test]
        fn triplet_sums(s in prop::collection::vec(-1.0f64..1.0, 1..64)) {
            let n: Vec<f64> = s.iter().map(|v| 0.5 - v).collect();
            let t = SampleTriplet::from_parts(s, n).unwrap();
            for i in 0..t.len() {
                prop_assert!((t.x[i] - (t.s[i] + t.n[i])).abs() <= 1e-6);
            }
            let q = t.noise_only();
            prop_assert_eq!(&q.x, &q.n);
            prop_assert!(q.s.iter().all(|v| *v == 0.0));
        }
    }
}
