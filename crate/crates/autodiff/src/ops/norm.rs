//! Batch renormalization over the channel axis of `[B, C, ...]` tensors.

use crate::error::{AutodiffError, Result};
use crate::graph::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Running statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RenormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RenormState {
    /// Fresh statistics: mean 0, variance 1.
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Correction clipping bounds for the current step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenormLimits {
    pub r_max: f64,
    pub d_max: f64,
}

impl RenormLimits {
    /// Plain batch normalization.
    pub const BATCH_NORM: Self = Self {
        r_max: 1.0,
        d_max: 0.0,
    };

    /// Linear warm-up from batch-norm behaviour (`r_max = 1`, `d_max = 0`) to
    /// `(r_max, d_max)` over `ramp_steps` steps.
    pub fn ramped(step: u64, ramp_steps: u64, r_max: f64, d_max: f64) -> Self {
        let t = if ramp_steps == 0 {
            1.0
        } else {
            (step as f64 / ramp_steps as f64).min(1.0)
        };
        Self {
            r_max: 1.0 + t * (r_max - 1.0),
            d_max: t * d_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormMode {
    Train(RenormLimits),
    Eval,
}

struct Layout {
    batch: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Result<Self> {
        if shape.len() < 2 {
            return Err(AutodiffError::InvalidArgument(format!(
                "normalization needs [B, C, ...], got {shape:?}"
            )));
        }
        Ok(Self {
            batch: shape[0],
            channels: shape[1],
            inner: shape[2..].iter().product(),
        })
    }

    fn count(&self) -> usize {
        self.batch * self.inner
    }

    /// Visits every element of channel `c` in a fixed order.
    fn for_channel(&self, data: &[f64], c: usize, mut f: impl FnMut(usize, f64)) {
        for b in 0..self.batch {
            let base = (b * self.channels + c) * self.inner;
            for (i, &v) in data[base..base + self.inner].iter().enumerate() {
                f(base + i, v);
            }
        }
    }
}

fn channel_moments(data: &[f64], lay: &Layout) -> (Vec<f64>, Vec<f64>) {
    let n = lay.count() as f64;
    let mut mean = vec![0.0; lay.channels];
    let mut var = vec![0.0; lay.channels];
    for c in 0..lay.channels {
        let mut s = 0.0;
        lay.for_channel(data, c, |_, v| s += v);
        let m = s / n;
        let mut q = 0.0;
        lay.for_channel(data, c, |_, v| q += (v - m) * (v - m));
        mean[c] = m;
        var[c] = q / n;
    }
    (mean, var)
}

impl Graph {
    /// Batch renormalization with learnable per-channel `gamma`/`beta`.
    ///
    /// In training mode the batch statistics normalize the input and the
    /// corrections `r`, `d` (clipped by `limits`) pull the result toward the
    /// running statistics; `r` and `d` are constants for differentiation.
    /// The running statistics in `state` are updated as a side effect.
    /// Evaluation mode normalizes with the running statistics only.
    pub fn batch_renorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut RenormState,
        mode: NormMode,
    ) -> Result<Var> {
        let lay = Layout::of(self.shape(x))?;
        if state.channels() != lay.channels {
            return Err(AutodiffError::InvalidArgument(format!(
                "renorm state has {} channels, input has {}",
                state.channels(),
                lay.channels
            )));
        }
        match mode {
            NormMode::Eval => self.affine_normalize(
                x,
                gamma,
                beta,
                &state.running_mean,
                &state.running_var,
                state.eps,
            ),
            NormMode::Train(limits) => {
                if lay.count() < 2 {
                    return Err(AutodiffError::InvalidArgument(
                        "training-mode normalization needs more than one value per channel".into(),
                    ));
                }
                let (mean, var) = channel_moments(self.value(x).data(), &lay);
                let mut r = vec![1.0; lay.channels];
                let mut d = vec![0.0; lay.channels];
                for c in 0..lay.channels {
                    let sigma_b = (var[c] + state.eps).sqrt();
                    let sigma_r = (state.running_var[c] + state.eps).sqrt();
                    r[c] = (sigma_b / sigma_r).clamp(1.0 / limits.r_max, limits.r_max);
                    d[c] = ((mean[c] - state.running_mean[c]) / sigma_r)
                        .clamp(-limits.d_max, limits.d_max);
                }
                let y = self.batch_renorm_with(x, gamma, beta, &r, &d, state.eps)?;
                let n = lay.count() as f64;
                for c in 0..lay.channels {
                    let unbiased = var[c] * n / (n - 1.0);
                    state.running_mean[c] += state.momentum * (mean[c] - state.running_mean[c]);
                    state.running_var[c] += state.momentum * (unbiased - state.running_var[c]);
                }
                Ok(y)
            }
        }
    }

    /// Training-mode renormalization with explicit corrections `r`, `d`:
    /// `y = gamma * (r * (x - mean_b) / sigma_b + d) + beta`.
    pub fn batch_renorm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        r: &[f64],
        d: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let lay = Layout::of(self.shape(x))?;
        self.check_affine(&lay, gamma, beta)?;
        if r.len() != lay.channels || d.len() != lay.channels {
            return Err(AutodiffError::InvalidArgument(
                "correction length must equal channel count".into(),
            ));
        }
        let (mean, var) = channel_moments(self.value(x).data(), &lay);
        let inv_sigma: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for c in 0..lay.channels {
            lay.for_channel(xv, c, |i, v| {
                let h = (v - mean[c]) * inv_sigma[c];
                xhat[i] = h;
                out[i] = gv[c] * (r[c] * h + d[c]) + bv[c];
            });
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let (r, d) = (r.to_vec(), d.to_vec());
        Ok(
            self.record(out, &[x, gamma, beta], move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let n = lay.count() as f64;
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; lay.channels];
                let mut gb = vec![0.0; lay.channels];
                for c in 0..lay.channels {
                    let (mut sum_g, mut sum_gh, mut sum_dxh, mut sum_dxh_h) = (0.0, 0.0, 0.0, 0.0);
                    let scale = gamma[c] * r[c];
                    lay.for_channel(g, c, |i, gi| {
                        sum_g += gi;
                        sum_gh += gi * xhat[i];
                        let dxh = gi * scale;
                        sum_dxh += dxh;
                        sum_dxh_h += dxh * xhat[i];
                    });
                    gb[c] = sum_g;
                    gg[c] = r[c] * sum_gh + d[c] * sum_g;
                    let (m1, m2) = (sum_dxh / n, sum_dxh_h / n);
                    lay.for_channel(g, c, |i, gi| {
                        gx[i] = inv_sigma[c] * (gi * scale - m1 - xhat[i] * m2);
                    });
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape")),
                    Some(Tensor::from_vec(gg)),
                    Some(Tensor::from_vec(gb)),
                ]
            }),
        )
    }

    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta` with fixed statistics.
    fn affine_normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let lay = Layout::of(self.shape(x))?;
        self.check_affine(&lay, gamma, beta)?;
        let inv_sigma: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        for c in 0..lay.channels {
            lay.for_channel(xv, c, |i, v| {
                out[i] = gv[c] * (v - mean[c]) * inv_sigma[c] + bv[c]
            });
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(
            self.record(out, &[x, gamma, beta], move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let gamma = ctx.inputs[1].data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; lay.channels];
                let mut gb = vec![0.0; lay.channels];
                for c in 0..lay.channels {
                    lay.for_channel(g, c, |i, gi| {
                        gx[i] = gi * gamma[c] * inv_sigma[c];
                        gg[c] += gi * (xv[i] - mean[c]) * inv_sigma[c];
                        gb[c] += gi;
                    });
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape")),
                    Some(Tensor::from_vec(gg)),
                    Some(Tensor::from_vec(gb)),
                ]
            }),
        )
    }

    fn check_affine(&self, lay: &Layout, gamma: Var, beta: Var) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [lay.channels] {
                return Err(AutodiffError::InvalidArgument(format!(
                    "{name} must have shape [{}], got {:?}",
                    lay.channels,
                    self.shape(v)
                )));
            }
        }
        Ok(())
    }
}
