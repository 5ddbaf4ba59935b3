//! Cascade of the time-domain and time-frequency networks.
//!
//! Both cascade orders share one set of parameters per network. Training
//! alternates the order step by step and supervises both the mid-point and
//! the final estimate; inference averages the two orders.

use std::fmt;
use std::str::FromStr;

use mdphd_autodiff::{Graph, NormMode, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{batch_tensor, Denoiser, Domain, ModelConfig};
use crate::objectives::{hybrid_loss, Objective, TripletVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathOrder {
    /// U-Net first, then TasNet.
    #[serde(rename = "u2d")]
    UThenD,
    /// TasNet first, then U-Net.
    #[serde(rename = "d2u")]
    DThenU,
}

impl PathOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UThenD => "u2d",
            Self::DThenU => "d2u",
        }
    }
}

impl fmt::Display for PathOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Even steps run U-Net first, odd steps TasNet first.
pub fn training_order(step: u64) -> PathOrder {
    if step.is_multiple_of(2) {
        PathOrder::UThenD
    } else {
        PathOrder::DThenU
    }
}

/// Which estimates a training step supervises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// Order chosen by [`training_order`].
    Alternating,
    /// Always the same order.
    Single(PathOrder),
    /// One network on its own, without the cascade.
    Solo(Domain),
}

impl PathMode {
    pub const NAMES: [&'static str; 5] = ["alternate", "u2d", "d2u", "tasnet", "unet"];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alternating => "alternate",
            Self::Single(o) => o.as_str(),
            Self::Solo(Domain::Time) => "tasnet",
            Self::Solo(Domain::TimeFrequency) => "unet",
        }
    }
}

impl fmt::Display for PathMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alternate" => Self::Alternating,
            "u2d" => Self::Single(PathOrder::UThenD),
            "d2u" => Self::Single(PathOrder::DThenU),
            "tasnet" => Self::Solo(Domain::Time),
            "unet" => Self::Solo(Domain::TimeFrequency),
            _ => {
                return Err(Error::UnknownName {
                    kind: "path mode",
                    name: s.into(),
                    available: Self::NAMES.join(", "),
                })
            }
        })
    }
}

/// How inference combines the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferMode {
    /// Mean of both cascade orders.
    Average,
    Path(PathOrder),
    Solo(Domain),
}

impl InferMode {
    /// The natural inference mode for a model trained in `mode`.
    pub fn for_training(mode: PathMode) -> Self {
        match mode {
            PathMode::Alternating => Self::Average,
            PathMode::Single(o) => Self::Path(o),
            PathMode::Solo(d) => Self::Solo(d),
        }
    }
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "average" => Self::Average,
            other => match other.parse::<PathMode>() {
                Ok(PathMode::Single(o)) => Self::Path(o),
                Ok(PathMode::Solo(d)) => Self::Solo(d),
                _ => {
                    return Err(Error::UnknownName {
                        kind: "inference mode",
                        name: s.into(),
                        available: "average, u2d, d2u, tasnet, unet".into(),
                    })
                }
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub tasnet: ModelConfig,
    pub unet: ModelConfig,
    pub mode: PathMode,
    /// Supervise both orders in every step instead of alternating.
    pub both_paths_per_step: bool,
}

impl HybridConfig {
    /// Hash of both network configurations; training mode is not part of it.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.tasnet.fingerprint());
        h.update(b":");
        h.update(self.unet.fingerprint());
        hex::encode(h.finalize())
    }
}

pub struct HybridModel {
    tasnet: Box<dyn Denoiser>,
    unet: Box<dyn Denoiser>,
    pub step: u64,
    pub mode: PathMode,
    pub both_paths_per_step: bool,
}

impl Clone for HybridModel {
    fn clone(&self) -> Self {
        Self {
            tasnet: self.tasnet.clone(),
            unet: self.unet.clone(),
            step: self.step,
            mode: self.mode,
            both_paths_per_step: self.both_paths_per_step,
        }
    }
}

impl fmt::Debug for HybridModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridModel")
            .field("tasnet", &self.tasnet)
            .field("unet", &self.unet)
            .field("step", &self.step)
            .field("mode", &self.mode)
            .finish()
    }
}

impl HybridModel {
    /// Builds both networks; the U-Net is seeded with `seed + 1`.
    pub fn new(cfg: &HybridConfig, seed: u64) -> Result<Self> {
        let tasnet = cfg.tasnet.build(seed)?;
        let unet = cfg.unet.build(seed.wrapping_add(1))?;
        Self::from_parts(tasnet, unet, cfg.mode, cfg.both_paths_per_step)
    }

    pub fn from_parts(
        tasnet: Box<dyn Denoiser>,
        unet: Box<dyn Denoiser>,
        mode: PathMode,
        both: bool,
    ) -> Result<Self> {
        if tasnet.domain() != Domain::Time || unet.domain() != Domain::TimeFrequency {
            return Err(invalid(
                "hybrid needs a time-domain and a time-frequency network",
            ));
        }
        Ok(Self {
            tasnet,
            unet,
            step: 0,
            mode,
            both_paths_per_step: both,
        })
    }

    pub fn config(&self) -> HybridConfig {
        HybridConfig {
            tasnet: self.tasnet.config(),
            unet: self.unet.config(),
            mode: self.mode,
            both_paths_per_step: self.both_paths_per_step,
        }
    }

    pub fn tasnet(&self) -> &dyn Denoiser {
        self.tasnet.as_ref()
    }

    pub fn unet(&self) -> &dyn Denoiser {
        self.unet.as_ref()
    }

    pub fn tasnet_mut(&mut self) -> &mut dyn Denoiser {
        self.tasnet.as_mut()
    }

    pub fn unet_mut(&mut self) -> &mut dyn Denoiser {
        self.unet.as_mut()
    }

    pub fn network_mut(&mut self, domain: Domain) -> &mut dyn Denoiser {
        match domain {
            Domain::Time => self.tasnet.as_mut(),
            Domain::TimeFrequency => self.unet.as_mut(),
        }
    }

    /// Both networks, TasNet first.
    pub fn networks(&self) -> [&dyn Denoiser; 2] {
        [self.tasnet.as_ref(), self.unet.as_ref()]
    }

    pub fn networks_mut(&mut self) -> [&mut dyn Denoiser; 2] {
        [self.tasnet.as_mut(), self.unet.as_mut()]
    }

    pub fn param_count(&self) -> usize {
        self.tasnet.param_count() + self.unet.param_count()
    }

    pub fn check_length(&self, len: usize) -> Result<()> {
        self.tasnet.check_length(len)?;
        self.unet.check_length(len)
    }

    /// `(mid, final)` estimates of one cascade order; hand-offs are waveforms.
    pub fn forward_path(
        &mut self,
        g: &mut Graph,
        x: Var,
        order: PathOrder,
        mode: NormMode,
    ) -> Result<(Var, Var)> {
        let (first, second) = match order {
            PathOrder::UThenD => (&mut self.unet, &mut self.tasnet),
            PathOrder::DThenU => (&mut self.tasnet, &mut self.unet),
        };
        let mid = first.forward(g, x, mode)?;
        let fin = second.forward(g, mid, mode)?;
        Ok((mid, fin))
    }

    /// Estimates supervised in the current step, in evaluation order.
    pub fn training_estimates(
        &mut self,
        g: &mut Graph,
        x: Var,
        mode: NormMode,
    ) -> Result<Vec<Var>> {
        let orders = match self.mode {
            PathMode::Solo(d) => return Ok(vec![self.network_mut(d).forward(g, x, mode)?]),
            PathMode::Single(o) => vec![o],
            PathMode::Alternating if self.both_paths_per_step => {
                vec![PathOrder::UThenD, PathOrder::DThenU]
            }
            PathMode::Alternating => vec![training_order(self.step)],
        };
        let mut out = Vec::with_capacity(2 * orders.len());
        for o in orders {
            let (mid, fin) = self.forward_path(g, x, o, mode)?;
            out.extend([mid, fin]);
        }
        Ok(out)
    }

    /// Loss of the current step: mid-point plus final loss of each active path.
    pub fn train_step_loss(
        &mut self,
        g: &mut Graph,
        objective: &dyn Objective,
        t: &TripletVars,
        mode: NormMode,
    ) -> Result<Var> {
        let est = self.training_estimates(g, t.x, mode)?;
        hybrid_loss(g, objective, t, &est)
    }

    /// Final estimate of one order in evaluation mode.
    pub fn infer_path(&mut self, windows: &[Vec<f64>], order: PathOrder) -> Result<Vec<Vec<f64>>> {
        let x = batch_tensor(windows)?;
        let len = x.shape()[1];
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (_, fin) = self.forward_path(&mut g, xv, order, NormMode::Eval)?;
        Ok(g.value(fin)
            .data()
            .chunks(len)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Mean of both cascade orders in evaluation mode.
    pub fn infer(&mut self, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let a = self.infer_path(windows, PathOrder::UThenD)?;
        let b = self.infer_path(windows, PathOrder::DThenU)?;
        Ok(a.iter().zip(&b).map(|(a, b)| average(a, b)).collect())
    }

    pub fn estimate(&mut self, windows: &[Vec<f64>], mode: InferMode) -> Result<Vec<Vec<f64>>> {
        match mode {
            InferMode::Average => self.infer(windows),
            InferMode::Path(o) => self.infer_path(windows, o),
            InferMode::Solo(d) => self.network_mut(d).enhance(windows),
        }
    }
}

/// Elementwise `0.5 (a + b)`.
pub fn average(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::preset;

    fn toy(mode: PathMode) -> HybridModel {
        let cfg = HybridConfig {
            tasnet: preset("tasnet-toy").unwrap(),
            unet: preset("unet-toy").unwrap(),
            mode,
            both_paths_per_step: false,
        };
        HybridModel::new(&cfg, 5).unwrap()
    }

    #[test]
    fn order_parity() {
        assert_eq!(training_order(0), PathOrder::UThenD);
        assert_eq!(training_order(1), PathOrder::DThenU);
        for s in 0..8 {
            assert_ne!(training_order(s), training_order(s + 1));
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for name in PathMode::NAMES {
            assert_eq!(name.parse::<PathMode>().unwrap().as_str(), name);
        }
        assert!("sideways".parse::<PathMode>().is_err());
        assert_eq!("average".parse::<InferMode>().unwrap(), InferMode::Average);
        assert_eq!(
            "d2u".parse::<InferMode>().unwrap(),
            InferMode::Path(PathOrder::DThenU)
        );
        assert!("alternate".parse::<InferMode>().is_err());
    }

    #[test]
    fn mid_point_is_first_network_output() {
        let mut h = toy(PathMode::Alternating);
        let x: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut g = Graph::new();
        let xv = g.constant(batch_tensor(std::slice::from_ref(&x)).unwrap());
        let (mid, fin) = h
            .forward_path(&mut g, xv, PathOrder::UThenD, NormMode::Eval)
            .unwrap();
        let unet = h.unet_mut().enhance(&[x]).unwrap();
        assert_eq!(g.value(mid).data(), &unet[0][..]);
        let tas = h.tasnet_mut().enhance(&[unet[0].clone()]).unwrap();
        assert_eq!(g.value(fin).data(), &tas[0][..]);
    }

    #[test]
    fn estimate_counts_follow_mode() {
        let x = batch_tensor(&[vec![0.1; 1024], vec![-0.2; 1024]]).unwrap();
        for (mode, both, expect) in [
            (PathMode::Alternating, false, 2),
            (PathMode::Alternating, true, 4),
            (PathMode::Single(PathOrder::DThenU), false, 2),
            (PathMode::Solo(Domain::Time), false, 1),
        ] {
            let mut h = toy(mode);
            h.both_paths_per_step = both;
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            assert_eq!(
                h.training_estimates(&mut g, xv, NormMode::Eval)
                    .unwrap()
                    .len(),
                expect
            );
        }
    }
}
