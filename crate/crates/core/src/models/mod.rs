//! The two domain networks behind a common [`Denoiser`] interface, plus the
//! named presets used by the CLI and the tests.

mod layers;
pub mod tasnet;
pub mod unet;

use std::fmt;

use mdphd_autodiff::{Graph, NormMode, ParamStore, RenormState, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::registry::Registry;

pub use tasnet::{TasNet, TasNetConfig};
pub use unet::{UNet, UNetConfig, UNetLevel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Time,
    TimeFrequency,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Time => "time",
            Self::TimeFrequency => "time-frequency",
        })
    }
}

/// Running statistics of one renormalization layer, keyed by layer path.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRenorm {
    pub name: String,
    pub state: RenormState,
}

/// A waveform-to-waveform speech estimator with named trainable parameters.
pub trait Denoiser: Send + Sync {
    /// Parameter name prefix, also the short model name.
    fn name(&self) -> &'static str;
    fn domain(&self) -> Domain;
    fn config(&self) -> ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn renorm_states(&self) -> &[NamedRenorm];
    fn renorm_states_mut(&mut self) -> &mut [NamedRenorm];
    /// Validates a window length before any work is done.
    fn check_length(&self, len: usize) -> Result<()>;
    /// Maps `x: [B, L]` to the speech estimate `[B, L]`. Training mode
    /// updates the renormalization statistics.
    fn forward(&mut self, g: &mut Graph, x: Var, mode: NormMode) -> Result<Var>;
    /// Layer table, receptive field and parameter total.
    fn describe(&self) -> String;
    fn boxed_clone(&self) -> Box<dyn Denoiser>;

    fn param_count(&self) -> usize {
        self.params().num_elements()
    }

    fn fingerprint(&self) -> String {
        self.config().fingerprint()
    }

    /// Eval-mode estimate for a batch of equal-length windows.
    fn enhance(&mut self, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let x = batch_tensor(windows)?;
        let len = x.shape()[1];
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = self.forward(&mut g, xv, NormMode::Eval)?;
        Ok(g.value(y).data().chunks(len).map(<[f64]>::to_vec).collect())
    }
}

impl Clone for Box<dyn Denoiser> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

impl fmt::Debug for dyn Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} params)", self.name(), self.param_count())
    }
}

/// Stacks equal-length windows into a `[B, L]` tensor.
pub fn batch_tensor(windows: &[Vec<f64>]) -> Result<Tensor> {
    let len = windows.first().map_or(0, Vec::len);
    if windows.is_empty() || len == 0 {
        return Err(invalid("need at least one non-empty window"));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != len) {
        return Err(invalid(format!(
            "window lengths differ: {} vs {len}",
            w.len()
        )));
    }
    Ok(Tensor::new(vec![windows.len(), len], windows.concat())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    TasNet(TasNetConfig),
    UNet(UNetConfig),
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            Self::TasNet(c) => Box::new(TasNet::new(c.clone(), seed)?),
            Self::UNet(c) => Box::new(UNet::new(c.clone(), seed)?),
        })
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::TasNet(c) => c.param_count(),
            Self::UNet(c) => c.param_count(),
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Named architecture presets.
pub fn presets() -> Registry<ModelConfig> {
    let mut r = Registry::new("preset");
    r.register("tasnet-toy", "time-domain net, ~50k parameters", || {
        ModelConfig::TasNet(TasNetConfig::toy())
    });
    r.register("tasnet-1.5m", "time-domain net, ~1.5M parameters", || {
        ModelConfig::TasNet(TasNetConfig {
            channels: 244,
            ..TasNetConfig::toy()
        })
    });
    r.register("tasnet-3m", "time-domain net, ~3M parameters", || {
        ModelConfig::TasNet(TasNetConfig {
            channels: 311,
            num_dilated_blocks: 10,
            ..TasNetConfig::toy()
        })
    });
    r.register("unet-toy", "time-frequency net, ~56k parameters", || {
        ModelConfig::UNet(UNetConfig::toy())
    });
    r.register("unet-1.5m", "time-frequency net, ~1.5M parameters", || {
        ModelConfig::UNet(UNetConfig::with_channels(&[12, 25, 50, 100, 200]))
    });
    r.register("unet-3m", "time-frequency net, ~3M parameters", || {
        ModelConfig::UNet(UNetConfig::with_channels(&[18, 36, 72, 144, 280]))
    });
    r
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    presets().create(name)
}
