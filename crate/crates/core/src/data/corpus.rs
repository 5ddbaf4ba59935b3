//! Windowed triplets in memory and the deterministic batch stream.
//!
//! A batch is a pure function of `(seed, step)`: window order is a seeded
//! shuffle per epoch, and the windows turned noise-only in an epoch are a
//! second seeded draw. Resuming at any step therefore reproduces the same
//! batches without replaying earlier ones.

use mdphd_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestEntry, NoiseSource, Split};
use super::noise::{NoiseKind, SynthNoiseSpec};
use super::{
    mix_at_snr, read_wav, slice_windows, synth_speech, SampleTriplet, DEFAULT_HOP, DEFAULT_WINDOW,
};
use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};

/// Largest tolerated share of unreadable manifest entries.
const MAX_SKIPPED: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    pub window: usize,
    pub hop: usize,
    /// Share of windows per epoch presented as noise-only.
    pub noise_only_fraction: f64,
    /// Length of entries that have neither clean speech nor a noise file.
    pub default_length: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            noise_only_fraction: 0.25,
            default_length: DEFAULT_WINDOW,
        }
    }
}

impl CorpusOptions {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.default_length == 0 {
            return Err(invalid("window, hop and default length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_only_fraction) {
            return Err(invalid(format!(
                "noise-only fraction {} outside [0, 1]",
                self.noise_only_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletWindow {
    pub triplet: SampleTriplet,
    /// Non-padded prefix length.
    pub valid_len: usize,
    pub noise_kind: String,
    pub snr_db: f64,
    /// Manifest entry index.
    pub entry: usize,
    /// The entry has no clean speech.
    pub noise_only: bool,
    /// Offset of the next window of the same entry.
    pub hop_to_next: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub s: Tensor,
    pub n: Tensor,
    pub indices: Vec<usize>,
    pub noise_only: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub windows: Vec<TripletWindow>,
    pub options: CorpusOptions,
    /// Entries skipped because they could not be read.
    pub skipped: usize,
}

fn fit_length(w: Waveform, len: usize) -> Vec<f64> {
    if w.len() >= len {
        w.samples[..len].to_vec()
    } else {
        // Loop short noise recordings.
        w.samples.iter().copied().cycle().take(len).collect()
    }
}

fn entry_signals(
    m: &Manifest,
    e: &ManifestEntry,
    default_length: usize,
) -> Result<(Option<Waveform>, Waveform)> {
    let clean = e
        .clean
        .as_ref()
        .map(|p| read_wav(m.resolve(p)))
        .transpose()?;
    let noise = match &e.noise {
        NoiseSource::File(p) => Some(read_wav(m.resolve(p))?),
        NoiseSource::Synth { .. } => None,
    };
    let len = clean
        .as_ref()
        .or(noise.as_ref())
        .map_or(e.length.unwrap_or(default_length), Waveform::len);
    if len == 0 {
        return Err(invalid("entry has no samples"));
    }
    let noise = match (&e.noise, noise) {
        (_, Some(n)) => Waveform::from_samples(fit_length(n, len)),
        (NoiseSource::Synth { synth }, None) => synth.generate(len)?,
        (NoiseSource::File(_), None) => unreachable!("file noise was read above"),
    };
    Ok((clean, noise))
}

/// `(x, s, n)` of one entry before windowing.
fn entry_triplet(
    m: &Manifest,
    e: &ManifestEntry,
    default_length: usize,
) -> Result<(SampleTriplet, bool)> {
    let (clean, noise) = entry_signals(m, e, default_length)?;
    match clean {
        Some(s) => {
            let (_, scaled) = mix_at_snr(&s, &noise, e.snr_db)?;
            Ok((SampleTriplet::from_parts(s.samples, scaled.samples)?, false))
        }
        None => Ok((
            SampleTriplet::from_parts(vec![0.0; noise.len()], noise.samples)?,
            true,
        )),
    }
}

/// In-memory corpus of synthetic speech mixed with synthetic noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpusSpec {
    pub utterances: usize,
    /// Samples per utterance.
    pub length: usize,
    /// Noise kinds, cycled over utterances.
    pub kinds: Vec<NoiseKind>,
    /// SNRs in dB, cycled after the kinds.
    pub snrs: Vec<f64>,
    pub seed: u64,
}

impl SynthCorpusSpec {
    /// `(kind, snr, speech seed, noise seed)` of utterance `i`.
    pub fn utterance(&self, i: usize) -> (NoiseKind, f64, u64, u64) {
        let k = self.kinds.len();
        let base = self.seed.wrapping_mul(1_000_003).wrapping_add(2 * i as u64);
        (
            self.kinds[i % k],
            self.snrs[(i / k) % self.snrs.len()],
            base,
            base + 1,
        )
    }
}

fn push_windows(
    out: &mut Vec<TripletWindow>,
    t: &SampleTriplet,
    options: &CorpusOptions,
    noise_kind: String,
    snr_db: f64,
    entry: usize,
    noise_only: bool,
) -> Result<()> {
    let xs = slice_windows(&t.x, options.window, options.hop)?;
    let ss = slice_windows(&t.s, options.window, options.hop)?;
    let ns = slice_windows(&t.n, options.window, options.hop)?;
    for ((x, s), n) in xs.into_iter().zip(ss).zip(ns) {
        out.push(TripletWindow {
            valid_len: x.valid_len,
            triplet: SampleTriplet {
                x: x.samples,
                s: s.samples,
                n: n.samples,
            },
            noise_kind: noise_kind.clone(),
            snr_db,
            entry,
            noise_only,
            hop_to_next: options.hop,
        });
    }
    Ok(())
}

impl Corpus {
    pub fn synthetic(spec: &SynthCorpusSpec, options: CorpusOptions) -> Result<Self> {
        options.validate()?;
        if spec.utterances == 0 || spec.kinds.is_empty() || spec.snrs.is_empty() {
            return Err(invalid(
                "synthetic corpus needs utterances, noise kinds and SNRs",
            ));
        }
        let mut windows = Vec::new();
        for i in 0..spec.utterances {
            let (kind, snr, speech_seed, noise_seed) = spec.utterance(i);
            let s = synth_speech(spec.length, speech_seed)?;
            let n = SynthNoiseSpec::new(kind, noise_seed).generate(spec.length)?;
            let (_, n) = mix_at_snr(&s, &n, snr)?;
            let t = SampleTriplet::from_parts(s.samples, n.samples)?;
            push_windows(&mut windows, &t, &options, kind.to_string(), snr, i, false)?;
        }
        Ok(Self {
            windows,
            options,
            skipped: 0,
        })
    }

    /// Loads and windows every entry of `split`. Unreadable entries are
    /// skipped with a warning; more than 10% skipped is an error.
    pub fn load(manifest: &Manifest, split: Split, options: CorpusOptions) -> Result<Self> {
        options.validate()?;
        let mut windows = Vec::new();
        let (mut total, mut skipped) = (0, 0);
        for (idx, e) in manifest.split(split) {
            total += 1;
            let (t, noise_only) = match entry_triplet(manifest, e, options.default_length) {
                Ok(v) => v,
                Err(err) => {
                    log::warn!("skipping manifest entry {}: {err}", idx + 1);
                    skipped += 1;
                    continue;
                }
            };
            push_windows(
                &mut windows,
                &t,
                &options,
                e.noise_label(),
                e.snr_db,
                idx,
                noise_only,
            )?;
        }
        if total == 0 {
            return Err(invalid(format!("manifest has no {split} entries")));
        }
        if skipped as f64 > MAX_SKIPPED * total as f64 {
            return Err(Error::InvalidArgument(format!(
                "{skipped} of {total} {split} entries could not be read"
            )));
        }
        if windows.is_empty() {
            return Err(invalid(format!("no readable {split} entries")));
        }
        Ok(Self {
            windows,
            options,
            skipped,
        })
    }

    pub fn from_windows(windows: Vec<TripletWindow>, options: CorpusOptions) -> Result<Self> {
        options.validate()?;
        if windows.is_empty() {
            return Err(invalid("corpus needs at least one window"));
        }
        let len = windows[0].triplet.len();
        if windows
            .iter()
            .any(|w| w.triplet.len() != len || w.triplet.s.len() != len || w.triplet.n.len() != len)
        {
            return Err(invalid("all corpus windows must have the same length"));
        }
        Ok(Self {
            windows,
            options,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows[0].triplet.len()
    }

    fn rng(seed: u64, epoch: u64, purpose: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(epoch.wrapping_mul(2).wrapping_add(purpose));
        r
    }

    /// Window order of `epoch`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut Self::rng(seed, epoch, 0));
        order
    }

    /// Which windows are noise-only in `epoch`: exactly
    /// `round(fraction * N)` of them, counting entries without clean speech,
    /// unless those alone exceed the target.
    pub fn noise_only_mask(&self, seed: u64, epoch: u64) -> Vec<bool> {
        let mut mask: Vec<bool> = self.windows.iter().map(|w| w.noise_only).collect();
        let target = (self.options.noise_only_fraction * self.len() as f64).round() as usize;
        let natural = mask.iter().filter(|m| **m).count();
        let mut candidates: Vec<usize> = (0..self.len()).filter(|&i| !mask[i]).collect();
        candidates.shuffle(&mut Self::rng(seed, epoch, 1));
        for &i in candidates.iter().take(target.saturating_sub(natural)) {
            mask[i] = true;
        }
        mask
    }

    /// Triplet `i` as presented in `epoch`.
    pub fn triplet(&self, i: usize, noise_only: bool) -> SampleTriplet {
        let t = &self.windows[i].triplet;
        if noise_only && !self.windows[i].noise_only {
            t.noise_only()
        } else {
            t.clone()
        }
    }

    /// Batch `step` of the stream: items `step*B .. step*B + B` of the
    /// concatenated per-epoch orders.
    pub fn batch(&self, seed: u64, step: u64, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        let n = self.len() as u64;
        let len = self.window_len();
        let (mut x, mut s, mut nz) = (Vec::new(), Vec::new(), Vec::new());
        let mut indices = Vec::with_capacity(batch_size);
        let mut flags = Vec::with_capacity(batch_size);
        let mut cached: Option<(u64, Vec<usize>, Vec<bool>)> = None;
        for j in 0..batch_size as u64 {
            let global = step * batch_size as u64 + j;
            let (epoch, pos) = (global / n, (global % n) as usize);
            if cached.as_ref().is_none_or(|c| c.0 != epoch) {
                cached = Some((
                    epoch,
                    self.epoch_order(seed, epoch),
                    self.noise_only_mask(seed, epoch),
                ));
            }
            let (_, order, mask) = cached.as_ref().expect("filled above");
            let i = order[pos];
            let t = self.triplet(i, mask[i]);
            x.extend(t.x);
            s.extend(t.s);
            nz.extend(t.n);
            indices.push(i);
            flags.push(mask[i]);
        }
        let shape = vec![batch_size, len];
        Ok(Batch {
            x: Tensor::new(shape.clone(), x)?,
            s: Tensor::new(shape.clone(), s)?,
            n: Tensor::new(shape, nz)?,
            indices,
            noise_only: flags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, natural: usize) -> Corpus {
        let windows = (0..n)
            .map(|i| {
                let s = if i < natural {
                    vec![0.0; 8]
                } else {
                    vec![0.1 * (i + 1) as f64; 8]
                };
                let noise = vec![0.01 * i as f64; 8];
                TripletWindow {
                    triplet: SampleTriplet::from_parts(s, noise).unwrap(),
                    valid_len: 8,
                    noise_kind: "k".into(),
                    snr_db: 5.0,
                    entry: i,
                    noise_only: i < natural,
                    hop_to_next: 4,
                }
            })
            .collect();
        Corpus::from_windows(
            windows,
            CorpusOptions {
                window: 8,
                hop: 4,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn exact_noise_only_share() {
        let c = synthetic(100, 0);
        for epoch in 0..5 {
            let m = c.noise_only_mask(3, epoch);
            assert_eq!(m.iter().filter(|v| **v).count(), 25);
        }
        let c = synthetic(100, 10);
        let m = c.noise_only_mask(3, 0);
        assert_eq!(m.iter().filter(|v| **v).count(), 25);
        assert!(m[..10].iter().all(|v| *v));
        let c = synthetic(100, 40);
        assert_eq!(c.noise_only_mask(3, 0).iter().filter(|v| **v).count(), 40);
    }

    #[test]
    fn batches_are_pure_in_seed_and_step() {
        let c = synthetic(10, 0);
        let a: Vec<Batch> = (0..7).map(|s| c.batch(1, s, 4).unwrap()).collect();
        assert_eq!(c.batch(1, 5, 4).unwrap(), a[5]);
        assert_ne!(c.batch(2, 5, 4).unwrap(), a[5]);
        // the first epoch visits every window once
        let mut seen: Vec<usize> = a[0]
            .indices
            .iter()
            .chain(&a[1].indices)
            .chain(&a[2].indices[..2])
            .copied()
            .collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for b in &a {
            for (k, &no) in b.noise_only.iter().enumerate() {
                let row = |t: &Tensor| t.data()[k * 8..(k + 1) * 8].to_vec();
                let (x, s, n) = (row(&b.x), row(&b.s), row(&b.n));
                for i in 0..8 {
                    assert!((x[i] - (s[i] + n[i])).abs() <= 1e-6);
                }
                if no {
                    assert!(s.iter().all(|v| *v == 0.0));
                    assert_eq!(x, n);
                }
            }
        }
    }

    #[test]
    fn loads_synthetic_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let speech = crate::data::synth_speech(20000, 1).unwrap();
        crate::data::write_wav(
            dir.path().join("c.wav"),
            &speech,
            crate::data::WavEncoding::Float32,
        )
        .unwrap();
        let entry = |clean: Option<&str>, split| ManifestEntry {
            clean: clean.map(Into::into),
            noise: NoiseSource::Synth {
                synth: SynthNoiseSpec::new(NoiseKind::HighfreqSine, 4),
            },
            snr_db: 5.0,
            split,
            noise_kind: None,
            length: Some(16384),
        };
        let m = Manifest::new(
            vec![
                entry(Some("c.wav"), Split::Train),
                entry(None, Split::Train),
                entry(Some("c.wav"), Split::Test),
            ],
            dir.path(),
        );
        let c = Corpus::load(&m, Split::Train, CorpusOptions::default()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.windows[1].valid_len < 16384);
        assert!(c.windows[2].noise_only);
        let measured =
            crate::metrics::snr_db(&c.windows[0].triplet.s, &c.windows[0].triplet.x).unwrap();
        assert!(measured.is_finite());

        let broken = Manifest::new(vec![entry(Some("missing.wav"), Split::Train)], dir.path());
        assert!(Corpus::load(&broken, Split::Train, CorpusOptions::default()).is_err());
        assert!(Corpus::load(&m, Split::Test, CorpusOptions::default()).is_ok());
    }
}
