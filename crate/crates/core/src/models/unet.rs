//! Time-frequency network: a 2D conv U-Net over the noisy log-magnitude that
//! estimates a ratio mask. The mask scales the noisy complex spectrogram and
//! the result is resynthesized with the noisy phase.

use std::fmt::Write as _;

use mdphd_autodiff::{ConvSpec, Graph, NormMode, Padding, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Builder};
use super::{Denoiser, Domain, ModelConfig, NamedRenorm};
use crate::dsp::{self, StftConfig, StftPlan};
use crate::error::{invalid, Result};

const PREFIX: &str = "unet";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetLevel {
    /// Filter size (frames, bins).
    pub kernel: (usize, usize),
    /// Stride (frames, bins).
    pub stride: (usize, usize),
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub levels: Vec<UNetLevel>,
    pub stft: StftConfig,
    pub log_floor: f64,
    pub leaky_slope: f64,
    pub renorm_momentum: f64,
}

impl UNetConfig {
    pub fn with_channels(channels: &[usize]) -> Self {
        Self {
            levels: channels
                .iter()
                .map(|&c| UNetLevel {
                    kernel: (5, 5),
                    stride: (2, 2),
                    channels: c,
                })
                .collect(),
            stft: StftConfig::default(),
            log_floor: dsp::LOG_FLOOR,
            leaky_slope: 0.2,
            renorm_momentum: 0.01,
        }
    }

    pub fn toy() -> Self {
        Self::with_channels(&[10, 20, 40])
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.levels.is_empty() {
            return Err(invalid("unet needs at least one level"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.channels == 0
                || l.kernel.0 == 0
                || l.kernel.1 == 0
                || l.stride.0 == 0
                || l.stride.1 == 0
            {
                return Err(invalid(format!(
                    "unet level {i} has a zero kernel, stride or channel count"
                )));
            }
        }
        if self.log_floor <= 0.0 {
            return Err(invalid("log_floor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.renorm_momentum) {
            return Err(invalid("renorm_momentum must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Product of strides along (frames, bins); the padded grid is a multiple of it.
    pub fn stride_product(&self) -> (usize, usize) {
        self.levels
            .iter()
            .fold((1, 1), |(a, b), l| (a * l.stride.0, b * l.stride.1))
    }

    fn channels_in(&self, level: usize) -> usize {
        if level == 0 {
            1
        } else {
            self.levels[level - 1].channels
        }
    }

    /// (input channels, output channels) of decoder level `i`.
    fn decoder_channels(&self, i: usize) -> (usize, usize) {
        let top = self.levels.len() - 1;
        let cin = if i == top {
            self.levels[i].channels
        } else {
            2 * self.levels[i].channels
        };
        (cin, self.channels_in(i))
    }

    fn area(l: &UNetLevel) -> usize {
        l.kernel.0 * l.kernel.1
    }

    fn encoder_params(&self, i: usize) -> usize {
        let l = &self.levels[i];
        let conv = self.channels_in(i) * l.channels * Self::area(l);
        // The first level has a bias; later levels are renormalized instead.
        conv + if i == 0 { l.channels } else { 2 * l.channels }
    }

    fn decoder_params(&self, i: usize) -> usize {
        let (cin, cout) = self.decoder_channels(i);
        let conv = cin * cout * Self::area(&self.levels[i]);
        conv + if i == 0 { 1 } else { 2 * cout }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        (0..self.levels.len())
            .map(|i| self.encoder_params(i) + self.decoder_params(i))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    cfg: UNetConfig,
    plan: StftPlan,
    params: ParamStore,
    renorm: Vec<NamedRenorm>,
}

fn enc_name(i: usize) -> String {
    format!("enc{i}")
}

fn dec_name(i: usize) -> String {
    format!("dec{i}")
}

impl UNet {
    pub fn new(cfg: UNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = StftPlan::new(cfg.stft)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut renorm = Vec::new();
        let mut b = Builder {
            prefix: PREFIX,
            store: &mut params,
            renorm: &mut renorm,
            rng: &mut rng,
            momentum: cfg.renorm_momentum,
        };
        for (i, l) in cfg.levels.iter().enumerate() {
            let cin = cfg.channels_in(i);
            let (kh, kw) = l.kernel;
            b.kernel(&enc_name(i), &[l.channels, cin, kh, kw], cin * kh * kw)?;
            if i == 0 {
                b.bias(&enc_name(i), l.channels)?;
            } else {
                b.renorm(&enc_name(i), l.channels)?;
            }
        }
        for i in (0..cfg.levels.len()).rev() {
            let (cin, cout) = cfg.decoder_channels(i);
            let l = &cfg.levels[i];
            let (kh, kw) = l.kernel;
            let fan_in = cin * (kh.div_ceil(l.stride.0)) * (kw.div_ceil(l.stride.1));
            b.kernel(&dec_name(i), &[cin, cout, kh, kw], fan_in)?;
            if i == 0 {
                b.bias(&dec_name(i), 1)?;
            } else {
                b.renorm(&dec_name(i), cout)?;
            }
        }
        Ok(Self {
            cfg,
            plan,
            params,
            renorm,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    fn spec(l: &UNetLevel) -> ConvSpec {
        ConvSpec::new(l.stride, Padding::Same)
    }

    /// Pre-sigmoid mask logits `[B, T, F]` for the log-magnitude `lm: [B, T, F]`.
    pub fn mask_logits(&mut self, g: &mut Graph, lm: Var, mode: NormMode) -> Result<Var> {
        let [batch, frames, bins] = *g.shape(lm) else {
            return Err(invalid(format!(
                "unet expects [batch, frames, bins], got {:?}",
                g.shape(lm)
            )));
        };
        let slope = self.cfg.leaky_slope;
        let (ph, pw) = self.cfg.stride_product();
        let (h, w) = (frames.div_ceil(ph) * ph, bins.div_ceil(pw) * pw);
        let p = &self.params;
        let x = g.reshape(lm, &[batch, 1, frames, bins])?;
        let x = g.resize2d(x, h, w)?;

        let mut skips = Vec::with_capacity(self.cfg.levels.len());
        let mut sizes = Vec::with_capacity(self.cfg.levels.len());
        let mut cur = x;
        for (i, l) in self.cfg.levels.iter().enumerate() {
            let name = enc_name(i);
            let shape = g.shape(cur);
            sizes.push((shape[2], shape[3]));
            let k = layers::load(g, p, PREFIX, &name, "kernel")?;
            let y = g.conv(cur, k, Self::spec(l))?;
            let y = if i == 0 {
                layers::add_bias(g, p, PREFIX, &name, y)?
            } else {
                layers::renorm(g, p, &mut self.renorm, PREFIX, &name, y, mode)?
            };
            cur = g.leaky_relu(y, slope);
            skips.push(cur);
        }

        for i in (0..self.cfg.levels.len()).rev() {
            let name = dec_name(i);
            let l = &self.cfg.levels[i];
            let input = if i == self.cfg.levels.len() - 1 {
                cur
            } else {
                g.concat_channels(cur, skips[i])?
            };
            let k = layers::load(g, p, PREFIX, &name, "kernel")?;
            let y = g.conv_transpose(input, k, Self::spec(l), sizes[i])?;
            cur = if i == 0 {
                layers::add_bias(g, p, PREFIX, &name, y)?
            } else {
                let y = layers::renorm(g, p, &mut self.renorm, PREFIX, &name, y, mode)?;
                g.leaky_relu(y, slope)
            };
        }
        let y = g.resize2d(cur, frames, bins)?;
        Ok(g.reshape(y, &[batch, frames, bins])?)
    }
}

impl Denoiser for UNet {
    fn name(&self) -> &'static str {
        PREFIX
    }

    fn domain(&self) -> Domain {
        Domain::TimeFrequency
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::UNet(self.cfg.clone())
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn renorm_states(&self) -> &[NamedRenorm] {
        &self.renorm
    }

    fn renorm_states_mut(&mut self) -> &mut [NamedRenorm] {
        &mut self.renorm
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(invalid("window length must be positive"));
        }
        Ok(())
    }

    fn forward(&mut self, g: &mut Graph, x: Var, mode: NormMode) -> Result<Var> {
        let [_, len] = *g.shape(x) else {
            return Err(invalid(format!(
                "unet expects [batch, samples], got {:?}",
                g.shape(x)
            )));
        };
        self.check_length(len)?;
        let plan = self.plan.clone();
        let z = dsp::tape::stft(g, &plan, x)?;
        let lm = dsp::tape::log_magnitude(g, z, self.cfg.log_floor)?;
        let logits = self.mask_logits(g, lm, mode)?;
        let mask = g.sigmoid(logits);
        let masked = dsp::tape::apply_mask(g, z, mask)?;
        dsp::tape::istft(g, &plan, masked, len)
    }

    fn describe(&self) -> String {
        let c = &self.cfg;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "unet: time-frequency mask network (stft {}/{})",
            c.stft.window_size, c.stft.hop_size
        );
        let _ = writeln!(s, "  {:<8} {:<34} {:>10}", "layer", "shape", "params");
        for (i, l) in c.levels.iter().enumerate() {
            let norm = if i == 0 { "bias" } else { "brn" };
            let shape = format!(
                "conv2d {}->{} k{}x{} s{}x{} +{norm}",
                c.channels_in(i),
                l.channels,
                l.kernel.0,
                l.kernel.1,
                l.stride.0,
                l.stride.1
            );
            let _ = writeln!(
                s,
                "  {:<8} {shape:<34} {:>10}",
                enc_name(i),
                c.encoder_params(i)
            );
        }
        for i in (0..c.levels.len()).rev() {
            let (cin, cout) = c.decoder_channels(i);
            let l = &c.levels[i];
            let tail = if i == 0 { "+bias sigmoid" } else { "+brn" };
            let shape = format!(
                "t-conv2d {cin}->{cout} k{}x{} s{}x{} {tail}",
                l.kernel.0, l.kernel.1, l.stride.0, l.stride.1
            );
            let _ = writeln!(
                s,
                "  {:<8} {shape:<34} {:>10}",
                dec_name(i),
                c.decoder_params(i)
            );
        }
        let (ph, pw) = c.stride_product();
        let _ = writeln!(s, "  grid padded to multiples of ({ph}, {pw}) frames/bins");
        let _ = write!(s, "  parameters: {}", self.param_count());
        s
    }

    fn boxed_clone(&self) -> Box<dyn Denoiser> {
        Box::new(self.clone())
    }
}
