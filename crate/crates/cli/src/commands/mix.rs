use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{ArgGroup, Args, ValueEnum};
use mdphd::data::{
    mix_at_snr, read_wav, synth_speech, write_wav, Manifest, ManifestEntry, NoiseKind, NoiseSource,
    Split, SynthNoiseSpec, WavEncoding, DEFAULT_WINDOW,
};
use mdphd::dsp::Waveform;
use serde::Serialize;

use super::{invalid, wav_files};
use crate::jobs::par_map;
use crate::{print_config, Global};

pub const MANIFEST: &str = "manifest.jsonl";
const SUBDIRS: [&str; 3] = ["noisy", "clean", "noise"];
/// RMS of emitted noise when there is no speech to scale against.
const SILENCE_NOISE_RMS: f64 = 0.1;

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("speech").required(true).args(["clean", "silence", "synth_speech"])))]
pub struct MixArgs {
    /// Directory of clean 16 kHz mono WAV files.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Emit noise-only entries (no speech).
    #[arg(long)]
    silence: bool,
    /// Generate this many synthetic speech utterances instead of reading files.
    #[arg(long)]
    synth_speech: Option<usize>,
    /// Comma-separated noise kinds (highfreq, babble, both) or WAV paths.
    #[arg(long, value_delimiter = ',', required = true)]
    noise: Vec<String>,
    /// Comma-separated target SNRs in dB.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    snr: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per entry for synthetic speech and noise-only entries.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    length: usize,
    /// Split recorded in the manifest.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// Replace an existing corpus in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Debug)]
enum NoiseArg {
    Synth(NoiseKind),
    File(PathBuf),
}

impl NoiseArg {
    fn parse(s: &str) -> anyhow::Result<Self> {
        if let Ok(k) = s.parse::<NoiseKind>() {
            return Ok(Self::Synth(k));
        }
        let p = PathBuf::from(s);
        if p.is_file() {
            Ok(Self::File(p))
        } else {
            Err(invalid(format!(
                "`{s}` is neither a noise kind (highfreq, babble, both) nor a WAV file"
            )))
        }
    }

    fn label(&self) -> String {
        match self {
            Self::Synth(k) => k.to_string(),
            Self::File(p) => p
                .file_stem()
                .map_or("file".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    speech: String,
    noise: Vec<String>,
    snr_db: &'a [f64],
    out: &'a Path,
    seed: u64,
    length: usize,
    split: SplitArg,
    force: bool,
    encoding: &'static str,
    entries: usize,
}

/// One trio to produce.
struct Job {
    index: usize,
    speech: Option<(String, Waveform)>,
    noise: usize,
    snr_db: f64,
}

fn check_output(out: &Path, force: bool) -> anyhow::Result<()> {
    let existing: Vec<PathBuf> = std::iter::once(out.join(MANIFEST))
        .chain(SUBDIRS.iter().map(|d| out.join(d)))
        .filter(|p| p.exists())
        .collect();
    if existing.is_empty() {
        return Ok(());
    }
    if !force {
        return Err(invalid(format!(
            "{} already holds a corpus; pass --force to overwrite",
            out.display()
        )));
    }
    for p in existing {
        if p.is_dir() {
            fs::remove_dir_all(&p)
        } else {
            fs::remove_file(&p)
        }
        .with_context(|| format!("removing {}", p.display()))?;
    }
    Ok(())
}

fn tile(w: &Waveform, len: usize) -> Waveform {
    Waveform::from_samples(w.samples.iter().copied().cycle().take(len).collect())
}

pub fn run(a: MixArgs, global: Global) -> anyhow::Result<()> {
    if a.snr.is_empty() || a.snr.iter().any(|v| !v.is_finite()) {
        return Err(invalid("--snr needs finite values"));
    }
    if a.length == 0 {
        return Err(invalid("--length must be positive"));
    }
    let noises: Vec<NoiseArg> = a
        .noise
        .iter()
        .map(|s| NoiseArg::parse(s))
        .collect::<anyhow::Result<_>>()?;
    let noise_files: Vec<Option<Waveform>> = noises
        .iter()
        .map(|n| match n {
            NoiseArg::File(p) => read_wav(p).map(Some),
            NoiseArg::Synth(_) => Ok(None),
        })
        .collect::<mdphd::Result<_>>()?;
    if noise_files
        .iter()
        .flatten()
        .any(|w| w.is_empty() || !(w.energy() > 0.0))
    {
        return Err(invalid("noise files must be non-silent"));
    }

    let (speech_label, utterances): (String, Vec<Option<(String, Waveform)>>) =
        match (&a.clean, a.synth_speech) {
            (Some(dir), _) => {
                let files = wav_files(dir)?;
                if files.is_empty() {
                    return Err(invalid(format!("no WAV files in {}", dir.display())));
                }
                let mut v = Vec::new();
                for f in &files {
                    let name = f
                        .file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned();
                    v.push(Some((name, read_wav(f)?)));
                }
                (format!("files from {}", dir.display()), v)
            }
            (None, Some(n)) => {
                if n == 0 {
                    return Err(invalid("--synth-speech must be positive"));
                }
                let v = (0..n)
                    .map(|i| {
                        synth_speech(a.length, a.seed.wrapping_mul(7919).wrapping_add(i as u64))
                            .map(|w| Some((format!("synth{i}"), w)))
                    })
                    .collect::<mdphd::Result<_>>()?;
                (format!("{n} synthetic utterances"), v)
            }
            (None, None) => ("silence".into(), vec![None]),
        };

    let mut jobs = Vec::new();
    for speech in &utterances {
        for noise in 0..noises.len() {
            for &snr_db in &a.snr {
                jobs.push(Job {
                    index: jobs.len(),
                    speech: speech.clone(),
                    noise,
                    snr_db,
                });
            }
        }
    }

    let resolved = Resolved {
        speech: speech_label,
        noise: noises.iter().map(NoiseArg::label).collect(),
        snr_db: &a.snr,
        out: &a.out,
        seed: a.seed,
        length: a.length,
        split: a.split,
        force: a.force,
        encoding: "float32",
        entries: jobs.len(),
    };
    print_config("mix", global, &resolved);

    check_output(&a.out, a.force)?;
    for d in SUBDIRS {
        fs::create_dir_all(a.out.join(d))
            .with_context(|| format!("creating {}", a.out.join(d).display()))?;
    }

    let split: Split = a.split.into();
    let entries = par_map(
        &jobs,
        global.jobs,
        || (),
        |_, job| -> anyhow::Result<ManifestEntry> {
            let name = format!("{:05}.wav", job.index);
            let len = job.speech.as_ref().map_or(a.length, |(_, w)| w.len());
            if len == 0 {
                return Err(invalid(format!(
                    "clean file {} is empty",
                    job.speech.as_ref().map_or("", |(n, _)| n)
                )));
            }
            let raw = match (&noises[job.noise], &noise_files[job.noise]) {
                (_, Some(w)) => tile(w, len),
                (NoiseArg::Synth(k), None) => SynthNoiseSpec::new(
                    *k,
                    a.seed
                        .wrapping_mul(1_000_003)
                        .wrapping_add(job.index as u64),
                )
                .generate(len)?,
                (NoiseArg::File(_), None) => unreachable!("noise files are read up front"),
            };
            let (s, n, x) = match &job.speech {
                Some((_, s)) => {
                    let (x, n) = mix_at_snr(s, &raw, job.snr_db)?;
                    (s.clone(), n, x)
                }
                None => {
                    let g = SILENCE_NOISE_RMS / raw.rms();
                    let n = Waveform::from_samples(raw.samples.iter().map(|v| g * v).collect());
                    (Waveform::zeros(len), n.clone(), n)
                }
            };
            for (dir, w) in SUBDIRS.iter().zip([&x, &s, &n]) {
                write_wav(a.out.join(dir).join(&name), w, WavEncoding::Float32)?;
            }
            Ok(ManifestEntry {
                clean: job
                    .speech
                    .as_ref()
                    .map(|_| PathBuf::from("clean").join(&name)),
                noise: NoiseSource::File(PathBuf::from("noise").join(&name)),
                snr_db: job.snr_db,
                split,
                noise_kind: Some(noises[job.noise].label()),
                length: Some(len),
            })
        },
    );
    let entries = entries.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = Manifest::new(entries, &a.out);
    manifest.save(a.out.join(MANIFEST))?;
    println!(
        "wrote {} trios and {}",
        manifest.entries.len(),
        a.out.join(MANIFEST).display()
    );
    Ok(())
}
