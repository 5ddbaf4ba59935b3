//! Speech-like test signals: voiced syllables with a gliding pitch and
//! moving formants, separated by short pauses, with occasional fricative
//! onsets. Used when no recorded clean corpus is available.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{invalid, Result};

/// RMS of generated utterances.
pub const SPEECH_RMS: f64 = 0.1;
const MAX_HARMONIC_HZ: f64 = 4000.0;

#[derive(Clone, Copy)]
struct Vowel {
    formants: [f64; 3],
}

impl Vowel {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            formants: [
                rng.gen_range(300.0..850.0),
                rng.gen_range(900.0..2300.0),
                rng.gen_range(2300.0..3200.0),
            ],
        }
    }

    fn lerp(self, other: Self, t: f64) -> Self {
        let mut formants = self.formants;
        for (f, o) in formants.iter_mut().zip(other.formants) {
            *f += t * (o - *f);
        }
        Self { formants }
    }

    /// Spectral envelope at `f` Hz: three second-order resonances with a
    /// -6 dB/octave source tilt.
    fn gain(self, f: f64) -> f64 {
        const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 160.0];
        let res: f64 = self
            .formants
            .iter()
            .zip(BANDWIDTHS)
            .map(|(&fc, bw)| {
                let r = f / fc;
                1.0 / ((1.0 - r * r).powi(2) + (f * bw / (fc * fc)).powi(2)).sqrt()
            })
            .sum();
        res * 100.0 / f.max(100.0)
    }
}

/// Deterministic speech surrogate of `len` samples at unit-free RMS [`SPEECH_RMS`].
pub fn synth_speech(len: usize, seed: u64) -> Result<Waveform> {
    if len == 0 {
        return Err(invalid("speech length must be positive"));
    }
    let sr = f64::from(SAMPLE_RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let speaker_f0 = rng.gen_range(95.0..220.0);
    let mut pos = (rng.gen_range(0.0..0.08) * sr) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.12..0.32) * sr) as usize;
        let f0_start = speaker_f0 * rng.gen_range(0.85..1.2);
        let f0_end = f0_start * rng.gen_range(0.8..1.2);
        let (v0, v1) = (Vowel::random(&mut rng), Vowel::random(&mut rng));
        let level = rng.gen_range(0.5..1.0);
        let mut phase = rng.gen_range(0.0..2.0 * PI);

        if rng.gen_bool(0.3) {
            let fric = (rng.gen_range(0.03..0.06) * sr) as usize;
            let fric_level = level * rng.gen_range(0.05..0.15);
            // First difference of white noise: a crude high-pass hiss.
            let mut prev: f64 = rng.sample(StandardNormal);
            for i in 0..fric.min(len - pos) {
                let cur: f64 = rng.sample(StandardNormal);
                let env = (PI * i as f64 / fric as f64).sin();
                out[pos + i] += fric_level * env * (cur - prev);
                prev = cur;
            }
            pos += fric / 2;
        }

        for i in 0..dur {
            if pos + i >= len {
                break;
            }
            let t = i as f64 / dur as f64;
            let f0 = f0_start + t * (f0_end - f0_start);
            phase += 2.0 * PI * f0 / sr;
            let vowel = v0.lerp(v1, t);
            let env = 0.5 * (1.0 - (2.0 * PI * t).cos());
            let mut v = 0.0;
            let mut h = 1;
            while h as f64 * f0 < MAX_HARMONIC_HZ {
                v += vowel.gain(h as f64 * f0) * (h as f64 * phase).sin();
                h += 1;
            }
            out[pos + i] += level * env * v;
        }
        pos += dur + (rng.gen_range(0.03..0.18) * sr) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= SPEECH_RMS / rms);
    }
    Ok(Waveform::from_samples(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_scaled() {
        let a = synth_speech(16000, 4).unwrap();
        assert_eq!(a, synth_speech(16000, 4).unwrap());
        assert_ne!(a, synth_speech(16000, 5).unwrap());
        assert!((a.rms() - SPEECH_RMS).abs() < 1e-12);
        assert!(synth_speech(0, 1).is_err());
    }

    #[test]
    fn has_pauses() {
        let w = synth_speech(32000, 7).unwrap();
        let frame_energy: Vec<f64> = w
            .samples
            .chunks(160)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        let peak = frame_energy.iter().cloned().fold(0.0, f64::max);
        assert!(frame_energy.iter().any(|e| *e < 1e-4 * peak));
    }
}
