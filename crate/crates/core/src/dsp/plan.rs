use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Spectrogram, StftConfig, Waveform};
use crate::error::{invalid, Error, Result};

/// Smallest squared-window envelope tolerated inside the retained region.
const MIN_ENVELOPE: f64 = 1e-12;

/// Prepared window and FFTs for one [`StftConfig`].
///
/// Besides the forward and inverse transforms this provides their exact
/// adjoints, which the differentiable wrappers in [`super::tape`] use.
#[derive(Clone)]
pub struct StftPlan {
    cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan").field("cfg", &self.cfg).finish()
    }
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(cfg.window_size);
        let inv = planner.plan_fft_inverse(cfg.window_size);
        Ok(Self {
            cfg,
            window: cfg.window()?,
            fwd,
            inv,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn num_bins(&self) -> usize {
        self.cfg.num_bins()
    }

    pub fn num_frames(&self, len: usize) -> usize {
        self.cfg.num_frames(len)
    }

    fn half(&self) -> usize {
        self.cfg.window_size / 2
    }

    fn padded_len(&self, len: usize) -> usize {
        (self.num_frames(len) - 1) * self.cfg.hop_size + self.cfg.window_size
    }

    /// Forward transform of `x` into frame-major `re`/`im` grids.
    pub(crate) fn analyze(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.cfg.window_size;
        let bins = self.num_bins();
        let half = self.half();
        let mut buf = vec![Complex64::default(); n];
        for t in 0..self.num_frames(x.len()) {
            let start = t * self.cfg.hop_size;
            for (k, b) in buf.iter_mut().enumerate() {
                let idx = (start + k) as i64 - half as i64;
                let v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(v * self.window[k], 0.0);
            }
            self.fwd.process(&mut buf);
            for f in 0..bins {
                re[t * bins + f] = buf[f].re;
                im[t * bins + f] = buf[f].im;
            }
        }
    }

    /// Adjoint of [`Self::analyze`] for a signal of length `len`.
    pub(crate) fn analyze_adjoint(&self, gre: &[f64], gim: &[f64], len: usize) -> Vec<f64> {
        let n = self.cfg.window_size;
        let bins = self.num_bins();
        let half = self.half();
        let mut gx = vec![0.0; len];
        let mut buf = vec![Complex64::default(); n];
        for t in 0..self.num_frames(len) {
            buf.fill(Complex64::default());
            for f in 0..bins {
                buf[f] = Complex64::new(gre[t * bins + f], gim[t * bins + f]);
            }
            // unnormalized inverse DFT: sum_b G[b] e^{+i 2 pi b k / n}
            self.inv.process(&mut buf);
            let start = t * self.cfg.hop_size;
            for (k, b) in buf.iter().enumerate() {
                let idx = (start + k) as i64 - half as i64;
                if idx >= 0 && (idx as usize) < len {
                    gx[idx as usize] += self.window[k] * b.re;
                }
            }
        }
        gx
    }

    /// Summed squared window over the padded buffer.
    fn envelope(&self, len: usize) -> Vec<f64> {
        let mut env = vec![0.0; self.padded_len(len)];
        for t in 0..self.num_frames(len) {
            let start = t * self.cfg.hop_size;
            for (k, w) in self.window.iter().enumerate() {
                env[start + k] += w * w;
            }
        }
        env
    }

    fn retained_envelope(&self, len: usize) -> Result<Vec<f64>> {
        let env = self.envelope(len);
        let half = self.half();
        let kept = env[half..half + len].to_vec();
        if let Some((i, e)) = kept.iter().enumerate().find(|(_, e)| **e < MIN_ENVELOPE) {
            return Err(Error::Numeric(format!(
                "window envelope {e:e} at sample {i} is too small to invert"
            )));
        }
        Ok(kept)
    }

    /// Inverse transform of frame-major `re`/`im` grids into `len` samples.
    pub(crate) fn synthesize(&self, re: &[f64], im: &[f64], len: usize) -> Result<Vec<f64>> {
        let n = self.cfg.window_size;
        let bins = self.num_bins();
        let half = self.half();
        let env = self.retained_envelope(len)?;
        let mut acc = vec![0.0; self.padded_len(len)];
        let mut buf = vec![Complex64::default(); n];
        for t in 0..self.num_frames(len) {
            hermitian_fill(
                &mut buf,
                &re[t * bins..(t + 1) * bins],
                &im[t * bins..(t + 1) * bins],
            );
            self.inv.process(&mut buf);
            let start = t * self.cfg.hop_size;
            for (k, b) in buf.iter().enumerate() {
                acc[start + k] += self.window[k] * b.re / n as f64;
            }
        }
        Ok(acc[half..half + len]
            .iter()
            .zip(&env)
            .map(|(a, e)| a / e)
            .collect())
    }

    /// Adjoint of [`Self::synthesize`]: maps a waveform gradient to bin gradients.
    pub(crate) fn synthesize_adjoint(
        &self,
        gy: &[f64],
        gre: &mut [f64],
        gim: &mut [f64],
    ) -> Result<()> {
        let len = gy.len();
        let n = self.cfg.window_size;
        let bins = self.num_bins();
        let half = self.half();
        let env = self.retained_envelope(len)?;
        let mut gacc = vec![0.0; self.padded_len(len)];
        for (i, (g, e)) in gy.iter().zip(&env).enumerate() {
            gacc[half + i] = g / e;
        }
        let mut buf = vec![Complex64::default(); n];
        for t in 0..self.num_frames(len) {
            let start = t * self.cfg.hop_size;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(self.window[k] * gacc[start + k] / n as f64, 0.0);
            }
            self.fwd.process(&mut buf);
            for f in 0..bins {
                let edge = f == 0 || f == bins - 1;
                let c = if edge { 1.0 } else { 2.0 };
                gre[t * bins + f] = c * buf[f].re;
                gim[t * bins + f] = if edge { 0.0 } else { c * buf[f].im };
            }
        }
        Ok(())
    }

    pub fn stft(&self, w: &Waveform) -> Result<Spectrogram> {
        if w.is_empty() {
            return Err(invalid("cannot transform an empty waveform"));
        }
        let frames = self.num_frames(w.len());
        let bins = self.num_bins();
        let mut re = vec![0.0; frames * bins];
        let mut im = vec![0.0; frames * bins];
        self.analyze(&w.samples, &mut re, &mut im);
        Ok(Spectrogram {
            bins: re
                .into_iter()
                .zip(im)
                .map(|(r, i)| Complex64::new(r, i))
                .collect(),
            num_frames: frames,
            config: self.cfg,
            original_length: w.len(),
        })
    }

    pub fn istft(&self, spec: &Spectrogram) -> Result<Waveform> {
        if spec.config != self.cfg {
            return Err(invalid(
                "spectrogram was produced with a different STFT configuration",
            ));
        }
        if spec.num_frames != self.num_frames(spec.original_length)
            || spec.bins.len() != spec.num_frames * self.num_bins()
        {
            return Err(invalid(format!(
                "spectrogram shape ({}, {}) inconsistent with original length {}",
                spec.num_frames,
                self.num_bins(),
                spec.original_length
            )));
        }
        let re: Vec<f64> = spec.bins.iter().map(|c| c.re).collect();
        let im: Vec<f64> = spec.bins.iter().map(|c| c.im).collect();
        Ok(Waveform::from_samples(self.synthesize(
            &re,
            &im,
            spec.original_length,
        )?))
    }
}

/// Builds a length-`n` Hermitian spectrum from `n/2 + 1` one-sided bins.
/// Imaginary parts of the DC and Nyquist bins are dropped.
fn hermitian_fill(buf: &mut [Complex64], re: &[f64], im: &[f64]) {
    let n = buf.len();
    let bins = re.len();
    for f in 0..bins {
        let edge = f == 0 || f == bins - 1;
        buf[f] = Complex64::new(re[f], if edge { 0.0 } else { im[f] });
    }
    for f in 1..bins - 1 {
        buf[n - f] = buf[f].conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// `<analyze(x), G> == <x, analyze_adjoint(G)>`.
    #[test]
    fn analysis_adjoint_identity() {
        for (cfg, len) in [
            (StftConfig::new(8, 4).unwrap(), 37),
            (StftConfig::default(), 3000),
        ] {
            let plan = StftPlan::new(cfg).unwrap();
            let x = random(len, 1);
            let m = plan.num_frames(len) * plan.num_bins();
            let (gr, gi) = (random(m, 2), random(m, 3));
            let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
            plan.analyze(&x, &mut re, &mut im);
            let lhs = dot(&re, &gr) + dot(&im, &gi);
            let rhs = dot(&x, &plan.analyze_adjoint(&gr, &gi, len));
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    /// `<synthesize(X), g> == <X, synthesize_adjoint(g)>`.
    #[test]
    fn synthesis_adjoint_identity() {
        for (cfg, len) in [
            (StftConfig::new(8, 4).unwrap(), 37),
            (StftConfig::default(), 3000),
        ] {
            let plan = StftPlan::new(cfg).unwrap();
            let m = plan.num_frames(len) * plan.num_bins();
            let (re, im) = (random(m, 4), random(m, 5));
            let g = random(len, 6);
            let y = plan.synthesize(&re, &im, len).unwrap();
            let (mut gr, mut gi) = (vec![0.0; m], vec![0.0; m]);
            plan.synthesize_adjoint(&g, &mut gr, &mut gi).unwrap();
            let lhs = dot(&y, &g);
            let rhs = dot(&re, &gr) + dot(&im, &gi);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn short_signals_round_trip() {
        let plan = StftPlan::new(StftConfig::new(8, 4).unwrap()).unwrap();
        for len in 1..20 {
            let w = Waveform::from_samples(random(len, len as u64));
            let back = plan.istft(&plan.stft(&w).unwrap()).unwrap();
            assert_eq!(back.len(), len);
            for (a, b) in back.samples.iter().zip(&w.samples) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
