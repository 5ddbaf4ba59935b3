//! Time-domain network: a strided 1D encoder, a stack of non-causal dilated
//! residual blocks producing a sigmoid mask over the encoded frames, and a
//! transposed 1D conv decoder back to the waveform.

use std::fmt::Write as _;

use mdphd_autodiff::{ConvSpec, Graph, NormMode, Padding, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Builder};
use super::{Denoiser, Domain, ModelConfig, NamedRenorm};
use crate::error::{invalid, Result};

const PREFIX: &str = "tasnet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasNetConfig {
    pub channels: usize,
    /// Dilated conv kernel length (odd).
    pub kernel_size: usize,
    pub num_dilated_blocks: usize,
    pub dilation_base: usize,
    /// Blocks per dilation stack; the dilation restarts at 1 after this many.
    /// `None` keeps doubling through the whole stack.
    pub dilation_cycle: Option<usize>,
    pub encoder_kernel: usize,
    pub stride: usize,
    pub leaky_slope: f64,
    pub renorm_momentum: f64,
}

impl TasNetConfig {
    pub fn toy() -> Self {
        Self {
            channels: 44,
            kernel_size: 3,
            num_dilated_blocks: 8,
            dilation_base: 2,
            dilation_cycle: None,
            encoder_kernel: 16,
            stride: 8,
            leaky_slope: 0.2,
            renorm_momentum: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.num_dilated_blocks == 0 {
            return Err(invalid(
                "tasnet needs at least one channel and one dilated block",
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(invalid(format!(
                "tasnet kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.dilation_base < 1 || self.stride == 0 || self.encoder_kernel < self.stride {
            return Err(invalid(
                "tasnet needs dilation_base >= 1 and encoder_kernel >= stride > 0",
            ));
        }
        if self.dilation_cycle == Some(0) {
            return Err(invalid("dilation_cycle must be positive"));
        }
        if !(0.0..=1.0).contains(&self.renorm_momentum) {
            return Err(invalid("renorm_momentum must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        let i = self.dilation_cycle.map_or(block, |c| block % c);
        self.dilation_base.pow(i as u32)
    }

    /// Span of input samples that can influence one output sample.
    pub fn receptive_field(&self) -> usize {
        let frames: usize = (0..self.num_dilated_blocks)
            .map(|i| (self.kernel_size - 1) * self.dilation(i))
            .sum::<usize>()
            + self.encoder_kernel.div_ceil(self.stride);
        (frames - 1) * self.stride + self.encoder_kernel
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (c, k) = (self.channels, self.encoder_kernel);
        let encoder = c * k + c;
        let blocks = self.num_dilated_blocks * (c * c * self.kernel_size + 2 * c);
        let mask = c * c + c;
        let decoder = c * k + 1;
        encoder + blocks + mask + decoder
    }
}

#[derive(Clone, Debug)]
pub struct TasNet {
    cfg: TasNetConfig,
    params: ParamStore,
    renorm: Vec<NamedRenorm>,
}

impl TasNet {
    pub fn new(cfg: TasNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut renorm = Vec::new();
        let (c, k) = (cfg.channels, cfg.encoder_kernel);
        let mut b = Builder {
            prefix: PREFIX,
            store: &mut params,
            renorm: &mut renorm,
            rng: &mut rng,
            momentum: cfg.renorm_momentum,
        };
        b.kernel("encoder", &[c, 1, k], k)?;
        b.bias("encoder", c)?;
        for i in 0..cfg.num_dilated_blocks {
            let name = format!("block{i}");
            b.kernel(&name, &[c, c, cfg.kernel_size], c * cfg.kernel_size)?;
            b.renorm(&name, c)?;
        }
        b.kernel("mask", &[c, c, 1], c)?;
        b.bias("mask", c)?;
        // Transposed conv kernel is laid out as its forward conv: [C, 1, K].
        b.kernel("decoder", &[c, 1, k], c * k.div_ceil(cfg.stride))?;
        b.bias("decoder", 1)?;
        Ok(Self {
            cfg,
            params,
            renorm,
        })
    }

    pub fn config(&self) -> &TasNetConfig {
        &self.cfg
    }

    fn stride_spec(&self) -> ConvSpec {
        ConvSpec::time(self.cfg.stride, 1, Padding::Same)
    }
}

impl Denoiser for TasNet {
    fn name(&self) -> &'static str {
        PREFIX
    }

    fn domain(&self) -> Domain {
        Domain::Time
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::TasNet(self.cfg.clone())
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
        if len == 0 || !len.is_multiple_of(self.cfg.stride) {
            return Err(invalid(format!(
                "window length {len} must be a positive multiple of the tasnet stride {}",
                self.cfg.stride
            )));
        }
        Ok(())
    }

    fn forward(&mut self, g: &mut Graph, x: Var, mode: NormMode) -> Result<Var> {
        let [batch, len] = *g.shape(x) else {
            return Err(invalid(format!(
                "tasnet expects [batch, samples], got {:?}",
                g.shape(x)
            )));
        };
        self.check_length(len)?;
        let slope = self.cfg.leaky_slope;
        let p = &self.params;
        let x3 = g.reshape(x, &[batch, 1, len])?;

        let k = layers::load(g, p, PREFIX, "encoder", "kernel")?;
        let enc = g.conv(x3, k, self.stride_spec())?;
        let enc = layers::add_bias(g, p, PREFIX, "encoder", enc)?;
        let enc = g.leaky_relu(enc, slope);

        let mut h = enc;
        for i in 0..self.cfg.num_dilated_blocks {
            let name = format!("block{i}");
            let k = layers::load(g, p, PREFIX, &name, "kernel")?;
            let y = g.conv1d_dilated(h, k, self.cfg.dilation(i))?;
            let y = layers::renorm(g, p, &mut self.renorm, PREFIX, &name, y, mode)?;
            let y = g.leaky_relu(y, slope);
            h = g.add(h, y)?;
        }

        let k = layers::load(g, p, PREFIX, "mask", "kernel")?;
        let m = g.conv(h, k, ConvSpec::time(1, 1, Padding::Valid))?;
        let m = layers::add_bias(g, p, PREFIX, "mask", m)?;
        let m = g.sigmoid(m);
        let masked = g.mul(enc, m)?;

        let k = layers::load(g, p, PREFIX, "decoder", "kernel")?;
        let y = g.conv_transpose(masked, k, self.stride_spec(), (1, len))?;
        let y = layers::add_bias(g, p, PREFIX, "decoder", y)?;
        Ok(g.reshape(y, &[batch, len])?)
    }

    fn describe(&self) -> String {
        let c = &self.cfg;
        let mut s = String::new();
        let _ = writeln!(s, "tasnet: time-domain dilated conv network");
        let _ = writeln!(s, "  {:<10} {:<26} {:>10}", "layer", "shape", "params");
        let mut row = |name: &str, shape: String, n: usize| {
            let _ = writeln!(s, "  {name:<10} {shape:<26} {n:>10}");
        };
        row(
            "encoder",
            format!(
                "conv1d 1->{} k{} s{}",
                c.channels, c.encoder_kernel, c.stride
            ),
            c.channels * c.encoder_kernel + c.channels,
        );
        for i in 0..c.num_dilated_blocks {
            row(
                &format!("block{i}"),
                format!(
                    "dconv {0}->{0} k{1} d{2} +brn",
                    c.channels,
                    c.kernel_size,
                    c.dilation(i)
                ),
                c.channels * c.channels * c.kernel_size + 2 * c.channels,
            );
        }
        row(
            "mask",
            format!("conv1d {0}->{0} k1 sigmoid", c.channels),
            c.channels * c.channels + c.channels,
        );
        row(
            "decoder",
            format!(
                "t-conv1d {}->1 k{} s{}",
                c.channels, c.encoder_kernel, c.stride
            ),
            c.channels * c.encoder_kernel + 1,
        );
        let _ = writeln!(s, "  receptive field: {} samples", c.receptive_field());
        let _ = write!(s, "  parameters: {}", self.param_count());
        s
    }

    fn boxed_clone(&self) -> Box<dyn Denoiser> {
        Box::new(self.clone())
    }
}
