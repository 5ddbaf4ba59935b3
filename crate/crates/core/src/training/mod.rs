//! Adam, learning-rate schedule, the training loop and checkpoints.

pub mod adam;
pub mod checkpoint;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mdphd_autodiff::{Graph, NormMode, ParamStore, RenormLimits, RenormState};
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;

use crate::data::{Corpus, DEFAULT_WINDOW};
use crate::error::{invalid, Error, Result};
use crate::hybrid::{training_order, HybridModel, PathMode};
use crate::models::Domain;
use crate::objectives::{LossKind, Objective, TripletVars};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.mdph";
pub const LOG_HEADER: &str = "step,lr,loss,path_order";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Steps between halvings; `None` means `max_steps / 3`.
    pub decay_interval: Option<u64>,
    pub decay_factor: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub loss: LossKind,
    /// Global gradient-norm bound; off when `None`.
    pub clip_grad_norm: Option<f64>,
    pub renorm_ramp_steps: u64,
    pub r_max: f64,
    pub d_max: f64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    /// Window length the model is trained on; enhancement reuses it.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            decay_interval: None,
            decay_factor: 0.5,
            adam: AdamConfig::default(),
            batch_size: 16,
            max_steps: 1000,
            seed: 0,
            loss: LossKind::L1Energy,
            clip_grad_norm: None,
            renorm_ramp_steps: 5000,
            r_max: 3.0,
            d_max: 5.0,
            log_interval: 10,
            checkpoint_interval: 100,
            window: DEFAULT_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr0, self.r_max, self.adam.eps]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.d_max < 0.0 {
            return Err(invalid(
                "learning rate, r_max and eps must be positive, d_max non-negative",
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(invalid(format!(
                "decay factor {} outside (0, 1)",
                self.decay_factor
            )));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0
            || self.log_interval == 0
            || self.checkpoint_interval == 0
            || self.window == 0
        {
            return Err(invalid("batch size, window and intervals must be positive"));
        }
        if self.decay_interval == Some(0) {
            return Err(invalid("decay interval must be positive"));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(invalid("gradient clip norm must be positive"));
            }
        }
        Ok(())
    }

    pub fn decay_interval(&self) -> u64 {
        self.decay_interval.unwrap_or((self.max_steps / 3).max(1))
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(self.lr0, self.decay_factor, self.decay_interval(), step)
    }

    fn limits(&self, step: u64) -> RenormLimits {
        RenormLimits::ramped(step, self.renorm_ramp_steps, self.r_max, self.d_max)
    }
}

/// `lr0 * factor^floor(step / interval)`.
pub fn lr_at(lr0: f64, factor: f64, interval: u64, step: u64) -> f64 {
    lr0 * factor.powi(i32::try_from(step / interval).unwrap_or(i32::MAX))
}

/// Label of what step `step` supervises, as written to the log.
pub fn path_label(mode: PathMode, both: bool, step: u64) -> &'static str {
    match mode {
        PathMode::Alternating if both => "both",
        PathMode::Alternating => training_order(step).as_str(),
        PathMode::Single(o) => o.as_str(),
        PathMode::Solo(Domain::Time) => "tasnet",
        PathMode::Solo(Domain::TimeFrequency) => "unet",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub path_order: &'static str,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.step, self.lr, self.loss, self.path_order
        )
    }
}

pub struct Trainer {
    pub model: HybridModel,
    pub adam: Adam,
    pub config: TrainConfig,
    objective: Box<dyn Objective>,
}

impl Trainer {
    pub fn new(model: HybridModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let objective = config.loss.objective();
        Ok(Self {
            model,
            adam: Adam::new(config.adam),
            config,
            objective,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (model, adam) = ck.restore()?;
        let mut t = Self::new(model, ck.meta.train.clone())?;
        t.adam = adam;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.adam, &self.config)
    }

    pub fn step(&self) -> u64 {
        self.model.step
    }

    fn renorm_snapshot(&self) -> Vec<RenormState> {
        self.model
            .networks()
            .iter()
            .flat_map(|n| n.renorm_states().iter().map(|r| r.state.clone()))
            .collect()
    }

    fn restore_renorm(&mut self, snap: Vec<RenormState>) {
        let mut it = snap.into_iter();
        for net in self.model.networks_mut() {
            for r in net.renorm_states_mut() {
                r.state = it.next().expect("snapshot of the same model");
            }
        }
    }

    /// Training-mode forward and backward on batch `step`; gradients land in the parameter stores.
    fn forward_backward(&mut self, corpus: &Corpus, backward: bool) -> Result<f64> {
        let step = self.model.step;
        self.model.check_length(corpus.window_len())?;
        let b = corpus.batch(self.config.seed, step, self.config.batch_size)?;
        let mut g = Graph::new();
        let t = TripletVars::constants(&mut g, b.x, b.s, b.n)?;
        let mode = NormMode::Train(self.config.limits(step));
        let loss = self
            .model
            .train_step_loss(&mut g, self.objective.as_ref(), &t, mode)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} at step {step}")));
        }
        if backward {
            let grads = g.backward(loss)?;
            for net in self.model.networks_mut() {
                net.params_mut().zero_grad();
                grads.accumulate_into(net.params_mut());
            }
        }
        Ok(value)
    }

    /// One optimizer step on batch `step`. On failure the model and optimizer are unchanged.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<LogRow> {
        let step = self.model.step;
        let snap = self.renorm_snapshot();
        let loss = match self.forward_backward(corpus, true) {
            Ok(v) => v,
            Err(e) => {
                self.restore_renorm(snap);
                return Err(e);
            }
        };
        let lr = self.config.lr_at(step);
        let clip = self.config.clip_grad_norm;
        let mut stores = active_stores(&mut self.model);
        if let Some(max) = clip {
            adam::clip_grad_norm(&mut stores, max);
        }
        if let Err(e) = self.adam.step(&mut stores, lr) {
            self.restore_renorm(snap);
            return Err(e);
        }
        let row = LogRow {
            step,
            lr,
            loss,
            path_order: path_label(self.model.mode, self.model.both_paths_per_step, step),
        };
        self.model.step += 1;
        Ok(row)
    }

    /// Loss on the current step's batch without updating anything.
    pub fn probe_loss(&mut self, corpus: &Corpus) -> Result<LogRow> {
        let step = self.model.step;
        let snap = self.renorm_snapshot();
        let loss = self.forward_backward(corpus, false);
        self.restore_renorm(snap);
        Ok(LogRow {
            step,
            lr: self.config.lr_at(step),
            loss: loss?,
            path_order: path_label(self.model.mode, self.model.both_paths_per_step, step),
        })
    }

    /// Trains until `stop_at` (default `max_steps`). Logs every
    /// `log_interval` steps plus a final row, and checkpoints every
    /// `checkpoint_interval` steps and at the end when `out_dir` is given.
    /// A non-finite loss or gradient stops the run; the last checkpoint on
    /// disk is the last good state.
    pub fn run(
        &mut self,
        corpus: &Corpus,
        out_dir: Option<&Path>,
        stop_at: Option<u64>,
    ) -> Result<Vec<LogRow>> {
        let stop = stop_at.unwrap_or(self.config.max_steps);
        let mut log = match out_dir {
            Some(dir) => Some(TrainLog::open(dir, self.model.step)?),
            None => None,
        };
        let mut rows = Vec::new();
        let mut emit = |row: LogRow, log: &mut Option<TrainLog>| -> Result<()> {
            log::info!(
                "step {} lr {:.3e} loss {:.6} ({})",
                row.step,
                row.lr,
                row.loss,
                row.path_order
            );
            if let Some(l) = log.as_mut() {
                l.append(&row)?;
            }
            rows.push(row);
            Ok(())
        };
        if out_dir.is_some() && self.model.step == 0 {
            self.save_to(out_dir)?;
        }
        while self.model.step < stop {
            let row = self
                .train_step(corpus)
                .inspect_err(|e| log::error!("training halted: {e}"))?;
            if row.step % self.config.log_interval == 0 {
                emit(row, &mut log)?;
            }
            if self
                .model
                .step
                .is_multiple_of(self.config.checkpoint_interval)
            {
                self.save_to(out_dir)?;
            }
        }
        let last = self.probe_loss(corpus)?;
        emit(last, &mut log)?;
        self.save_to(out_dir)?;
        Ok(rows)
    }

    fn save_to(&self, dir: Option<&Path>) -> Result<()> {
        match dir {
            Some(d) => self.checkpoint().save(d.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    }
}

/// Parameter stores the current mode trains.
fn active_stores(model: &mut HybridModel) -> Vec<&mut ParamStore> {
    let solo = match model.mode {
        PathMode::Solo(d) => Some(d),
        _ => None,
    };
    model
        .networks_mut()
        .into_iter()
        .filter(|n| solo.is_none_or(|d| n.domain() == d))
        .map(|n| n.params_mut())
        .collect()
}

/// CSV training log; resuming appends and drops rows past the resume step.
struct TrainLog {
    path: PathBuf,
}

impl TrainLog {
    fn open(dir: &Path, step: u64) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOG_FILE);
        let ctx = |p: &Path| format!("writing {}", p.display());
        let mut text = String::from(LOG_HEADER);
        text.push('\n');
        if step > 0 {
            if let Ok(old) = fs::read_to_string(&path) {
                for line in old.lines().skip(1) {
                    let s: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
                    if s.is_some_and(|s| s < step) {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
            }
        }
        fs::write(&path, text).map_err(|e| Error::io(ctx(&path), e))?;
        Ok(Self { path })
    }

    fn append(&mut self, row: &LogRow) -> Result<()> {
        let ctx = || format!("writing {}", self.path.display());
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(ctx(), e))?;
        writeln!(f, "{}", row.csv()).map_err(|e| Error::io(ctx(), e))
    }
}
