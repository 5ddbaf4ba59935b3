use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use mdphd::data::{read_wav, write_wav, WavEncoding};
use mdphd::dsp::Waveform;
use mdphd::enhance::enhance_signal;
use mdphd::hybrid::{HybridModel, InferMode};
use mdphd::training::Checkpoint;
use serde::Serialize;

use super::{invalid, wav_files};
use crate::jobs::par_map;
use crate::{print_config, Global};

/// Windows per forward pass.
pub const INFER_BATCH: usize = 8;

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// WAV file or directory of WAV files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output WAV file, or directory when --in is a directory.
    #[arg(long)]
    out: PathBuf,
    /// average, u2d, d2u, tasnet or unet [default: matches the training mode].
    #[arg(long)]
    mode: Option<String>,
    /// Window length in samples [default: the training window].
    #[arg(long)]
    window: Option<usize>,
}

/// Restores a model and the inference settings a checkpoint implies.
pub fn load_model(
    ckpt: &Path,
    mode: Option<&str>,
    window: Option<usize>,
) -> anyhow::Result<(HybridModel, InferMode, usize)> {
    let ck = Checkpoint::load(ckpt)?;
    let (model, _) = ck.restore()?;
    let mode = match mode {
        Some(m) => m.parse()?,
        None => InferMode::for_training(model.mode),
    };
    let window = window.unwrap_or(ck.meta.train.window);
    model.check_length(window)?;
    Ok((model, mode, window))
}

pub fn mode_name(mode: InferMode) -> String {
    match mode {
        InferMode::Average => "average".into(),
        InferMode::Path(o) => o.to_string(),
        InferMode::Solo(d) => match d {
            mdphd::models::Domain::Time => "tasnet".into(),
            mdphd::models::Domain::TimeFrequency => "unet".into(),
        },
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    ckpt: &'a Path,
    input: &'a Path,
    out: &'a Path,
    mode: String,
    window: usize,
    hop: usize,
    cross_fade: &'static str,
    encoding: &'static str,
    files: usize,
}

pub fn run(a: EnhanceArgs, global: Global) -> anyhow::Result<()> {
    let (model, mode, window) = load_model(&a.ckpt, a.mode.as_deref(), a.window)?;
    let pairs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        let files = wav_files(&a.input)?;
        if files.is_empty() {
            return Err(invalid(format!("no WAV files in {}", a.input.display())));
        }
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        files
            .into_iter()
            .map(|f| {
                (
                    a.out.join(f.file_name().expect("listed file has a name")),
                    f,
                )
            })
            .map(|(o, i)| (i, o))
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    print_config(
        "enhance",
        global,
        &Resolved {
            ckpt: &a.ckpt,
            input: &a.input,
            out: &a.out,
            mode: mode_name(mode),
            window,
            hop: window / 2,
            cross_fade: "triangular",
            encoding: "float32",
            files: pairs.len(),
        },
    );
    let results = par_map(
        &pairs,
        global.jobs,
        || model.clone(),
        |m, (src, dst)| -> anyhow::Result<()> {
            let w = read_wav(src)?;
            if w.is_empty() {
                return Err(invalid(format!("{} has no samples", src.display())));
            }
            let y = enhance_signal(m, &w.samples, window, mode, INFER_BATCH)?;
            write_wav(dst, &Waveform::new(y, w.sample_rate)?, WavEncoding::Float32)?;
            log::info!("{} -> {}", src.display(), dst.display());
            Ok(())
        },
    );
    results.into_iter().collect::<anyhow::Result<Vec<()>>>()?;
    println!("enhanced {} file(s)", pairs.len());
    Ok(())
}
