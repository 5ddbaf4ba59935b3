use std::path::PathBuf;

use clap::Args;
use mdphd::data::{Corpus, CorpusOptions, Manifest, Split};
use mdphd::hybrid::{HybridConfig, HybridModel, PathMode};
use mdphd::objectives::LossKind;
use mdphd::training::{Checkpoint, TrainConfig, Trainer, CHECKPOINT_FILE, LOG_FILE};
use serde::Serialize;

use super::invalid;
use crate::presets::hybrid_preset;
use crate::{print_config, Global};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON-lines manifest; its train split is used.
    #[arg(long)]
    manifest: PathBuf,
    /// Hybrid preset: toy, 1.5m or 3m.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Objective: l1, l2, snr or spec.
    #[arg(long, default_value = "l1")]
    loss: String,
    /// alternate, u2d, d2u, tasnet or unet.
    #[arg(long, default_value = "alternate")]
    path_mode: String,
    /// Supervise both cascade orders every step instead of alternating.
    #[arg(long)]
    both_paths_per_step: bool,
    /// Total optimizer steps.
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Seeds initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the checkpoint and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Initial learning rate [default: from preset].
    #[arg(long)]
    lr: Option<f64>,
    /// Steps between learning-rate halvings [default: steps / 3].
    #[arg(long)]
    decay_interval: Option<u64>,
    /// [default: from preset]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training window in samples [default: from preset].
    #[arg(long)]
    window: Option<usize>,
    /// Window hop in samples [default: window / 2].
    #[arg(long)]
    hop: Option<usize>,
    /// Share of each epoch shown as noise-only windows.
    #[arg(long, default_value_t = 0.25)]
    noise_only_fraction: f64,
    /// Global gradient-norm bound; off when absent.
    #[arg(long)]
    clip_grad_norm: Option<f64>,
    /// Steps over which renormalization limits ramp up from plain batch norm.
    #[arg(long, default_value_t = 5000)]
    renorm_ramp_steps: u64,
    #[arg(long, default_value_t = 10)]
    log_interval: u64,
    #[arg(long, default_value_t = 100)]
    checkpoint_interval: u64,
    /// Continue from a checkpoint; architecture and training settings come
    /// from it, only --steps and the intervals may change.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    manifest: &'a PathBuf,
    out: &'a PathBuf,
    preset: Option<&'a str>,
    resume: Option<&'a PathBuf>,
    start_step: u64,
    model: HybridConfig,
    param_count: usize,
    train: &'a TrainConfig,
    hop: usize,
    noise_only_fraction: f64,
}

pub fn run(a: TrainArgs, global: Global) -> anyhow::Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut t = Trainer::from_checkpoint(&ck)?;
            t.config.max_steps = a.steps;
            t.config.log_interval = a.log_interval;
            t.config.checkpoint_interval = a.checkpoint_interval;
            t
        }
        None => {
            let preset = hybrid_preset(&a.preset)?;
            let (tasnet, unet) = preset.networks()?;
            let mode: PathMode = a.path_mode.parse()?;
            let cfg = HybridConfig {
                tasnet,
                unet,
                mode,
                both_paths_per_step: a.both_paths_per_step,
            };
            if a.both_paths_per_step && mode != PathMode::Alternating {
                return Err(invalid(
                    "--both-paths-per-step only applies to --path-mode alternate",
                ));
            }
            let train = TrainConfig {
                lr0: a.lr.unwrap_or(preset.lr),
                decay_interval: a.decay_interval,
                batch_size: a.batch_size.unwrap_or(preset.batch_size),
                max_steps: a.steps,
                seed: a.seed,
                loss: a.loss.parse::<LossKind>()?,
                clip_grad_norm: a.clip_grad_norm,
                renorm_ramp_steps: a.renorm_ramp_steps,
                log_interval: a.log_interval,
                checkpoint_interval: a.checkpoint_interval,
                window: a.window.unwrap_or(preset.window),
                ..Default::default()
            };
            Trainer::new(HybridModel::new(&cfg, a.seed)?, train)?
        }
    };
    if trainer.step() > a.steps {
        return Err(invalid(format!(
            "checkpoint is already at step {}, past --steps {}",
            trainer.step(),
            a.steps
        )));
    }
    let window = trainer.config.window;
    let hop = a.hop.unwrap_or(window / 2).max(1);
    trainer.model.check_length(window)?;
    print_config(
        "train",
        global,
        &Resolved {
            manifest: &a.manifest,
            out: &a.out,
            preset: a.resume.is_none().then_some(a.preset.as_str()),
            resume: a.resume.as_ref(),
            start_step: trainer.step(),
            model: trainer.model.config(),
            param_count: trainer.model.param_count(),
            train: &trainer.config,
            hop,
            noise_only_fraction: a.noise_only_fraction,
        },
    );

    let manifest = Manifest::load(&a.manifest)?;
    let options = CorpusOptions {
        window,
        hop,
        noise_only_fraction: a.noise_only_fraction,
        default_length: window,
    };
    let corpus = Corpus::load(&manifest, Split::Train, options)?;
    if corpus.is_empty() {
        return Err(invalid(format!(
            "{} has no train entries",
            a.manifest.display()
        )));
    }
    log::info!("{} training windows", corpus.len());
    let rows = trainer.run(&corpus, Some(&a.out), None)?;
    if let Some(last) = rows.last() {
        println!("final step {} loss {:.6}", last.step, last.loss);
    }
    println!(
        "wrote {} and {}",
        a.out.join(CHECKPOINT_FILE).display(),
        a.out.join(LOG_FILE).display()
    );
    Ok(())
}
