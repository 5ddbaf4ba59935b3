use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use mdphd::data::{
    read_wav, slice_windows, Corpus, CorpusOptions, Manifest, SampleTriplet, Split, TripletWindow,
};
use mdphd::metrics::{evaluate, snr_db, EvalReport};
use serde::Serialize;

use super::enhance::{load_model, mode_name, INFER_BATCH};
use super::{invalid, wav_files};
use crate::jobs::par_map;
use crate::{print_config, Global};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["ckpt", "pairs"])))]
pub struct EvalArgs {
    /// Checkpoint to evaluate on the manifest's test split.
    #[arg(long, requires = "manifest")]
    ckpt: Option<PathBuf>,
    /// Directory with `noisy/`, `enhanced/` and `clean/` WAV files matched by name.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Test manifest. With --pairs it labels files named by entry index
    /// (`00012.wav`); without it every file is one condition labelled by
    /// its rounded input SNR.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score whole utterances instead of windows.
    #[arg(long)]
    per_utterance: bool,
    /// average, u2d, d2u, tasnet or unet [default: matches the training mode].
    #[arg(long)]
    mode: Option<String>,
    /// Window length in samples [default: the training window, or 16384 with --pairs].
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    source: String,
    manifest: Option<&'a PathBuf>,
    out: Option<&'a PathBuf>,
    per_utterance: bool,
    mode: Option<String>,
    window: usize,
    hop: usize,
}

fn report(a: &EvalArgs, r: &EvalReport) -> anyhow::Result<()> {
    match &a.out {
        Some(p) => {
            r.save(p)?;
            println!("wrote {} rows to {}", r.rows.len(), p.display());
        }
        None => print!("{}", r.to_csv()),
    }
    Ok(())
}

pub fn run(a: EvalArgs, global: Global) -> anyhow::Result<()> {
    match (&a.ckpt, &a.pairs) {
        (Some(ckpt), _) => run_model(&a, ckpt, global),
        (None, Some(dir)) => run_pairs(&a, dir, global),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn run_model(a: &EvalArgs, ckpt: &Path, global: Global) -> anyhow::Result<()> {
    let manifest_path = a
        .manifest
        .as_ref()
        .expect("clap requires --manifest with --ckpt");
    let (model, mode, window) = load_model(ckpt, a.mode.as_deref(), a.window)?;
    let hop = (window / 2).max(1);
    print_config(
        "eval",
        global,
        &Resolved {
            source: format!("checkpoint {}", ckpt.display()),
            manifest: Some(manifest_path),
            out: a.out.as_ref(),
            per_utterance: a.per_utterance,
            mode: Some(mode_name(mode)),
            window,
            hop,
        },
    );
    let manifest = Manifest::load(manifest_path)?;
    let options = CorpusOptions {
        window,
        hop,
        noise_only_fraction: 0.0,
        default_length: window,
    };
    let corpus = Corpus::load(&manifest, Split::Test, options)?;
    if corpus.is_empty() {
        return Err(invalid(format!(
            "{} has no test entries",
            manifest_path.display()
        )));
    }
    let chunks: Vec<Vec<Vec<f64>>> = corpus
        .windows
        .chunks(INFER_BATCH)
        .map(|c| c.iter().map(|w| w.triplet.x.clone()).collect())
        .collect();
    let est = par_map(
        &chunks,
        global.jobs,
        || model.clone(),
        |m, c| m.estimate(c, mode),
    );
    let est: Vec<Vec<f64>> = est
        .into_iter()
        .collect::<mdphd::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    report(a, &evaluate(&corpus.windows, &est, a.per_utterance)?)
}

/// Noisy, enhanced and clean signals of one file name.
struct Trio {
    label: String,
    snr_db: f64,
    x: Vec<f64>,
    est: Vec<f64>,
    s: Vec<f64>,
}

fn load_trio(dir: &Path, noisy: &Path, manifest: Option<&Manifest>) -> anyhow::Result<Trio> {
    let name = noisy.file_name().expect("listed file has a name");
    let x = read_wav(noisy)?.samples;
    let est = read_wav(dir.join("enhanced").join(name))?.samples;
    let s = read_wav(dir.join("clean").join(name))?.samples;
    if est.len() != x.len() || s.len() != x.len() {
        return Err(invalid(format!(
            "{}: noisy, enhanced and clean lengths differ",
            name.to_string_lossy()
        )));
    }
    let (label, snr) = match manifest {
        Some(m) => {
            let stem = noisy.file_stem().unwrap_or_default().to_string_lossy();
            let idx: usize = stem.parse().map_err(|_| {
                invalid(format!(
                    "{stem}: expected a manifest entry index as file name"
                ))
            })?;
            let e = m
                .entries
                .get(idx)
                .ok_or_else(|| invalid(format!("{stem}: no manifest entry {idx}")))?;
            (e.noise_label(), e.snr_db)
        }
        None => ("pairs".to_string(), (snr_db(&s, &x)? * 10.0).round() / 10.0),
    };
    Ok(Trio {
        label,
        snr_db: snr,
        x,
        est,
        s,
    })
}

fn run_pairs(a: &EvalArgs, dir: &Path, global: Global) -> anyhow::Result<()> {
    let window = a.window.unwrap_or(mdphd::data::DEFAULT_WINDOW);
    let hop = (window / 2).max(1);
    print_config(
        "eval",
        global,
        &Resolved {
            source: format!("pairs {}", dir.display()),
            manifest: a.manifest.as_ref(),
            out: a.out.as_ref(),
            per_utterance: a.per_utterance,
            mode: None,
            window,
            hop,
        },
    );
    let manifest = a.manifest.as_ref().map(Manifest::load).transpose()?;
    let files = wav_files(&dir.join("noisy"))?;
    if files.is_empty() {
        return Err(invalid(format!(
            "no WAV files in {}",
            dir.join("noisy").display()
        )));
    }
    let trios = par_map(
        &files,
        global.jobs,
        || (),
        |_, f| load_trio(dir, f, manifest.as_ref()),
    );
    let mut windows = Vec::new();
    let mut est = Vec::new();
    for (entry, t) in trios.into_iter().enumerate() {
        let t = t?;
        let xs = slice_windows(&t.x, window, hop)?;
        let ss = slice_windows(&t.s, window, hop)?;
        let es = slice_windows(&t.est, window, hop)?;
        for ((xw, sw), ew) in xs.into_iter().zip(ss).zip(es) {
            let n = xw
                .samples
                .iter()
                .zip(&sw.samples)
                .map(|(x, s)| x - s)
                .collect();
            windows.push(TripletWindow {
                triplet: SampleTriplet {
                    x: xw.samples,
                    s: sw.samples,
                    n,
                },
                valid_len: xw.valid_len,
                noise_kind: t.label.clone(),
                snr_db: t.snr_db,
                entry,
                noise_only: false,
                hop_to_next: hop,
            });
            est.push(ew.samples);
        }
    }
    report(a, &evaluate(&windows, &est, a.per_utterance)?)
}
