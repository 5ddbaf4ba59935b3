use mdphd::models::{preset, presets, ModelConfig};
use serde::Serialize;

/// A matched pair of networks with the training defaults that suit them.
#[derive(Clone, Debug, Serialize)]
pub struct HybridPreset {
    pub name: &'static str,
    pub tasnet: &'static str,
    pub unet: &'static str,
    pub lr: f64,
    pub batch_size: usize,
    pub window: usize,
}

pub const HYBRID_PRESETS: [HybridPreset; 3] = [
    // Small windows and a higher rate so desk-scale runs make progress.
    HybridPreset {
        name: "toy",
        tasnet: "tasnet-toy",
        unet: "unet-toy",
        lr: 2e-3,
        batch_size: 8,
        window: 2048,
    },
    HybridPreset {
        name: "1.5m",
        tasnet: "tasnet-1.5m",
        unet: "unet-1.5m",
        lr: 2e-4,
        batch_size: 16,
        window: 16384,
    },
    HybridPreset {
        name: "3m",
        tasnet: "tasnet-3m",
        unet: "unet-3m",
        lr: 2e-4,
        batch_size: 16,
        window: 16384,
    },
];

pub fn hybrid_preset(name: &str) -> anyhow::Result<&'static HybridPreset> {
    HYBRID_PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            let names: Vec<&str> = HYBRID_PRESETS.iter().map(|p| p.name).collect();
            mdphd::Error::UnknownName {
                kind: "hybrid preset",
                name: name.into(),
                available: names.join(", "),
            }
            .into()
        })
}

impl HybridPreset {
    pub fn networks(&self) -> mdphd::Result<(ModelConfig, ModelConfig)> {
        Ok((preset(self.tasnet)?, preset(self.unet)?))
    }
}

/// Hybrid preset names followed by single-network names.
pub fn all_names() -> Vec<&'static str> {
    HYBRID_PRESETS
        .iter()
        .map(|p| p.name)
        .chain(presets().names())
        .collect()
}
