//! Finite-difference checks of whole-network parameter gradients.

use mdphd_autodiff::{
    check_gradients, ConvSpec, GradCheckOptions, Graph, NormMode, Padding, RenormLimits,
    RenormState, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{tape, StftConfig, StftPlan};
use crate::error::Result;
use crate::hybrid::{HybridModel, PathOrder};
use crate::models::Domain;
use crate::objectives::{base_loss, hybrid_loss, LossKind, TripletVars};

/// Plain batch statistics, so outputs do not depend on running averages.
pub const CHECK_MODE: NormMode = NormMode::Train(RenormLimits::BATCH_NORM);

/// Which part of the model a check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Solo(Domain),
    Path(PathOrder),
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::Solo(Domain::Time),
        Target::Solo(Domain::TimeFrequency),
        Target::Path(PathOrder::UThenD),
        Target::Path(PathOrder::DThenU),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Solo(Domain::Time) => "tasnet",
            Self::Solo(Domain::TimeFrequency) => "unet",
            Self::Path(o) => o.as_str(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch3 {
    pub x: Tensor,
    pub s: Tensor,
    pub n: Tensor,
}

impl Batch3 {
    /// Gaussian speech and noise stand-ins of shape `[batch, len]`.
    pub fn random(batch: usize, len: usize, seed: u64) -> Result<Self> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let s = Tensor::randn(vec![batch, len], &mut r).map(|v| 0.3 * v);
        let n = Tensor::randn(vec![batch, len], &mut r).map(|v| 0.2 * v);
        let x = Tensor::new(
            vec![batch, len],
            s.data().iter().zip(n.data()).map(|(a, b)| a + b).collect(),
        )?;
        Ok(Self { x, s, n })
    }
}

fn loss(
    model: &mut HybridModel,
    target: Target,
    kind: LossKind,
    data: &Batch3,
) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let t = TripletVars::constants(&mut g, data.x.clone(), data.s.clone(), data.n.clone())?;
    let obj = kind.objective();
    let l = match target {
        Target::Solo(d) => {
            let est = model.network_mut(d).forward(&mut g, t.x, CHECK_MODE)?;
            base_loss(&mut g, obj.as_ref(), &t, est)?
        }
        Target::Path(o) => {
            let (mid, fin) = model.forward_path(&mut g, t.x, o, CHECK_MODE)?;
            hybrid_loss(&mut g, obj.as_ref(), &t, &[mid, fin])?
        }
    };
    Ok((g, l))
}

/// Offsets biases and renorm shifts by up to `±scale`. Freshly initialized
/// zero offsets leave zero-padded regions exactly on activation kinks, where
/// finite differences are not meaningful.
pub fn jitter_offsets(model: &mut HybridModel, scale: f64, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for net in model.networks_mut() {
        for p in net
            .params_mut()
            .iter_mut()
            .filter(|p| p.name().ends_with(".bias") || p.name().ends_with(".beta"))
        {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += r.gen_range(-scale..scale));
        }
    }
}

/// Worst coordinate of a parameter check.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ParamCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, floor)`; the floor is `1e-3` of the
    /// largest numeric gradient.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<ParamMismatch>,
}

impl ParamCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= tol
    }
}

/// Central differences over `coords` sampled coordinates of every parameter
/// tensor reachable from `target`, with step `rel_step * (1 + |v|)`. Larger
/// networks need smaller steps: the more pre-activations a coordinate feeds,
/// the likelier one of them crosses a kink within the step.
pub fn check_params(
    model: &HybridModel,
    target: Target,
    kind: LossKind,
    data: &Batch3,
    coords: usize,
    rel_step: f64,
    seed: u64,
) -> Result<ParamCheckReport> {
    let mut m = model.clone();
    let (mut g, l) = loss(&mut m, target, kind, data)?;
    let grads = g.backward(l)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (ni, net) in model.networks().iter().enumerate() {
        if let Target::Solo(d) = target {
            if net.domain() != d {
                continue;
            }
        }
        for p in net.params().iter() {
            let analytic = grads
                .param(p.name())
                .cloned()
                .unwrap_or_else(|| p.value.zeros_like());
            for _ in 0..coords.min(p.value.len()) {
                let i = r.gen_range(0..p.value.len());
                let v = p.value.data()[i];
                let h = rel_step * (1.0 + v.abs());
                let eval = |delta: f64| -> Result<f64> {
                    let mut m = model.clone();
                    m.networks_mut()[ni]
                        .params_mut()
                        .get_mut(p.name())?
                        .value
                        .data_mut()[i] = v + delta;
                    let (g, l) = loss(&mut m, target, kind, data)?;
                    Ok(g.value(l).item())
                };
                let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
                pairs.push((p.name().to_string(), i, analytic.data()[i], numeric));
            }
        }
    }
    let floor = 1e-3 * pairs.iter().map(|p| p.3.abs()).fold(0.0, f64::max);
    let mut report = ParamCheckReport {
        checked: pairs.len(),
        ..Default::default()
    };
    for (param, index, analytic, numeric) in pairs {
        let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        if !(e <= report.max_rel_error) {
            report.max_rel_error = e;
            report.worst = Some(ParamMismatch {
                param,
                index,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}

/// Random linear functional of `y`, so every output coordinate matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(Tensor::randn(
        g.shape(y).to_vec(),
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
    ));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Every differentiable op family on random inputs, two instances each.
/// Returns the worst relative error per instance.
pub fn op_suite() -> Vec<(&'static str, Result<f64>)> {
    let opts = GradCheckOptions {
        max_coords: 48,
        ..Default::default()
    };
    let run = |inputs: Vec<Tensor>, f: &mut dyn FnMut(&mut Graph, &[Var]) -> Result<Var>| {
        check_gradients(&inputs, f, opts).map(|r| r.max_rel_error)
    };
    let mut out = Vec::new();
    for seed in 0..2u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Tensor::randn(vec![2, 3, 20], &mut r);
        let k = Tensor::randn(vec![4, 3, 3], &mut r);
        out.push((
            "dilated conv1d",
            run(vec![x, k], &mut |g, v| {
                let y = g.conv1d_dilated(v[0], v[1], 4)?;
                project(g, y, seed)
            }),
        ));

        let x = Tensor::randn(vec![2, 2, 9, 8], &mut r);
        let k = Tensor::randn(vec![3, 2, 3, 3], &mut r);
        out.push((
            "strided conv2d",
            run(vec![x, k], &mut |g, v| {
                let y = g.conv(v[0], v[1], ConvSpec::new((2, 2), Padding::Same))?;
                project(g, y, seed)
            }),
        ));

        let y = Tensor::randn(vec![2, 3, 4, 5], &mut r);
        let k = Tensor::randn(vec![3, 2, 5, 5], &mut r);
        out.push((
            "transposed conv2d",
            run(vec![y, k], &mut |g, v| {
                let x =
                    g.conv_transpose(v[0], v[1], ConvSpec::new((2, 2), Padding::Same), (8, 10))?;
                project(g, x, seed)
            }),
        ));

        let x = Tensor::randn(vec![4, 3, 6], &mut r).map(|v| 1.5 * v + 0.5);
        let gamma = Tensor::randn(vec![3], &mut r);
        let beta = Tensor::randn(vec![3], &mut r);
        out.push((
            "batch renorm (train)",
            run(vec![x, gamma, beta], &mut |g, v| {
                let mut state = RenormState::new(3, 0.1);
                let y = g.batch_renorm(
                    v[0],
                    v[1],
                    v[2],
                    &mut state,
                    NormMode::Train(RenormLimits::BATCH_NORM),
                )?;
                let y = g.leaky_relu(y, 0.2);
                project(g, y, seed)
            }),
        ));

        let plan = StftPlan::new(StftConfig::new(64, 32).unwrap()).unwrap();
        let x = Tensor::randn(vec![2, 150], &mut r);
        let frames = plan.num_frames(150);
        let logits = Tensor::randn(vec![2, frames, plan.num_bins()], &mut r);
        out.push((
            "stft, log-magnitude, mask, istft",
            run(vec![x, logits], &mut |g, v| {
                let z = tape::stft(g, &plan, v[0])?;
                let lm = tape::log_magnitude(g, z, 1e-7)?;
                let gate = g.add(lm, v[1])?;
                let m = g.sigmoid(gate);
                let masked = tape::apply_mask(g, z, m)?;
                let y = tape::istft(g, &plan, masked, 150)?;
                project(g, y, seed)
            }),
        ));

        let a = Tensor::randn(vec![3, 7], &mut r).map(|v| v.abs() + 0.5);
        let b = Tensor::from_vec(vec![r.gen_range(0.5..2.0)]);
        out.push((
            "pointwise chain",
            run(vec![a, b], &mut |g, v| {
                let s = g.sqrt(v[0])?;
                let l = g.ln(s)?;
                let q = g.div_scalar_var(l, v[1])?;
                let floor = g.constant(Tensor::full(vec![3, 7], -0.3));
                let c = g.clamp_min(q, floor)?;
                let sq = g.square(c);
                let lr = g.leaky_relu(sq, 0.2);
                project(g, lr, seed)
            }),
        ));
    }
    out
}
