//! Training objectives.
//!
//! Every loss is a sum over the samples of one window and a mean over the
//! batch. The energy-conserving kinds penalize both the speech error
//! `s - ŝ` and the implied noise error `n - (x - ŝ)`.

use std::fmt;
use std::str::FromStr;

use mdphd_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, StftConfig, StftPlan};
use crate::error::{invalid, Error, Result};
use crate::registry::Registry;

/// Additive guard in the SNR objective so that silent references are defined.
pub const SNR_DELTA: f64 = 1e-12;
/// Relative floor on the error power in the SNR objective.
pub const SNR_ERROR_FLOOR: f64 = 1e-12;
/// Largest tolerated `|x - (s + n)|` before a warning is logged.
const MIXTURE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "l1")]
    L1Energy,
    #[serde(rename = "l2")]
    L2Energy,
    #[serde(rename = "snr")]
    SnrObj,
    #[serde(rename = "spec")]
    SpecL2,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::L1Energy, Self::L2Energy, Self::SnrObj, Self::SpecL2];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1Energy => "l1",
            Self::L2Energy => "l2",
            Self::SnrObj => "snr",
            Self::SpecL2 => "spec",
        }
    }

    pub fn objective(self) -> Box<dyn Objective> {
        objectives()
            .create(self.as_str())
            .expect("every kind is registered")
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "loss",
                name: s.to_string(),
                available: Self::ALL.map(|k| k.as_str()).join(", "),
            })
    }
}

/// Graph handles of an aligned `(x, s, n)` batch, each `[B, L]`.
#[derive(Clone, Copy, Debug)]
pub struct TripletVars {
    pub x: Var,
    pub s: Var,
    pub n: Var,
}

impl TripletVars {
    /// Loads the three batches as constants.
    pub fn constants(g: &mut Graph, x: Tensor, s: Tensor, n: Tensor) -> Result<Self> {
        if x.shape() != s.shape() || x.shape() != n.shape() || x.rank() != 2 {
            return Err(invalid(format!(
                "triplet shapes differ or are not [batch, samples]: {:?} {:?} {:?}",
                x.shape(),
                s.shape(),
                n.shape()
            )));
        }
        let worst = x
            .data()
            .iter()
            .zip(s.data())
            .zip(n.data())
            .map(|((x, s), n)| (x - (s + n)).abs())
            .fold(0.0, f64::max);
        if worst > MIXTURE_TOLERANCE {
            log::warn!("noisy input deviates from speech + noise by up to {worst:e}");
        }
        Ok(Self {
            x: g.constant(x),
            s: g.constant(s),
            n: g.constant(n),
        })
    }
}

/// A differentiable loss of the speech estimate against a triplet.
pub trait Objective: Send + Sync {
    fn kind(&self) -> LossKind;

    /// Batch-mean loss; `est` has the triplet's `[B, L]` shape.
    fn loss(&self, g: &mut Graph, t: &TripletVars, est: Var) -> Result<Var>;
}

fn check_est(g: &Graph, t: &TripletVars, est: Var) -> Result<()> {
    if g.shape(est) != g.shape(t.s) {
        return Err(invalid(format!(
            "estimate shape {:?} differs from reference {:?}",
            g.shape(est),
            g.shape(t.s)
        )));
    }
    Ok(())
}

/// `(s - ŝ, n - (x - ŝ))`.
fn residuals(g: &mut Graph, t: &TripletVars, est: Var) -> Result<(Var, Var)> {
    check_est(g, t, est)?;
    let speech = g.sub(t.s, est)?;
    let noise_est = g.sub(t.x, est)?;
    let noise = g.sub(t.n, noise_est)?;
    Ok((speech, noise))
}

struct L1Energy;

impl Objective for L1Energy {
    fn kind(&self) -> LossKind {
        LossKind::L1Energy
    }

    fn loss(&self, g: &mut Graph, t: &TripletVars, est: Var) -> Result<Var> {
        let (a, b) = residuals(g, t, est)?;
        let a = g.abs(a);
        let b = g.abs(b);
        let a = g.sum_per_item(a)?;
        let b = g.sum_per_item(b)?;
        let per_item = g.add(a, b)?;
        Ok(g.mean(per_item))
    }
}

struct L2Energy;

impl L2Energy {
    fn norm(g: &mut Graph, r: Var) -> Result<Var> {
        let sq = g.square(r);
        let e = g.sum_per_item(sq)?;
        Ok(g.sqrt(e)?)
    }
}

impl Objective for L2Energy {
    fn kind(&self) -> LossKind {
        LossKind::L2Energy
    }

    fn loss(&self, g: &mut Graph, t: &TripletVars, est: Var) -> Result<Var> {
        let (a, b) = residuals(g, t, est)?;
        let a = Self::norm(g, a)?;
        let b = Self::norm(g, b)?;
        let per_item = g.add(a, b)?;
        Ok(g.mean(per_item))
    }
}

/// Negative SNR in dB:
/// `-10 log10((Σs² + δ) / (max(Σ(s-ŝ)², floor·Σs²) + δ))`.
struct SnrObjective;

impl Objective for SnrObjective {
    fn kind(&self) -> LossKind {
        LossKind::SnrObj
    }

    fn loss(&self, g: &mut Graph, t: &TripletVars, est: Var) -> Result<Var> {
        check_est(g, t, est)?;
        let len = g.shape(t.s)[1];
        let signal: Vec<f64> = g
            .value(t.s)
            .data()
            .chunks(len)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        let err = g.sub(t.s, est)?;
        let err = g.square(err);
        let err = g.sum_per_item(err)?;
        let floor = g.constant(Tensor::from_vec(
            signal.iter().map(|p| SNR_ERROR_FLOOR * p).collect(),
        ));
        let err = g.clamp_min(err, floor)?;
        let err = g.add_scalar(err, SNR_DELTA);
        let err_db = g.ln(err)?;
        let err_db = g.scale(err_db, 10.0 / std::f64::consts::LN_10);
        let signal_db = g.constant(Tensor::from_vec(
            signal
                .iter()
                .map(|p| (p + SNR_DELTA).ln() * (10.0 / std::f64::consts::LN_10))
                .collect(),
        ));
        let per_item = g.sub(err_db, signal_db)?;
        Ok(g.mean(per_item))
    }
}

/// `‖ |stft(s)| - |stft(ŝ)| ‖₂` per item.
struct SpecL2 {
    plan: StftPlan,
}

impl Objective for SpecL2 {
    fn kind(&self) -> LossKind {
        LossKind::SpecL2
    }

    fn loss(&self, g: &mut Graph, t: &TripletVars, est: Var) -> Result<Var> {
        check_est(g, t, est)?;
        let zs = dsp::tape::stft(g, &self.plan, t.s)?;
        let ze = dsp::tape::stft(g, &self.plan, est)?;
        let ms = dsp::tape::magnitude(g, zs)?;
        let me = dsp::tape::magnitude(g, ze)?;
        let d = g.sub(ms, me)?;
        let d = g.square(d);
        let e = g.sum_per_item(d)?;
        let per_item = g.sqrt(e)?;
        Ok(g.mean(per_item))
    }
}

/// Loss kinds by their CLI names.
pub fn objectives() -> Registry<Box<dyn Objective>> {
    let mut r: Registry<Box<dyn Objective>> = Registry::new("loss");
    r.register(
        "l1",
        "energy-conserving l1 on speech and noise errors",
        || Box::new(L1Energy),
    );
    r.register(
        "l2",
        "energy-conserving l2 on speech and noise errors",
        || Box::new(L2Energy),
    );
    r.register("snr", "negative SNR of the estimate in dB", || {
        Box::new(SnrObjective)
    });
    r.register("spec", "l2 distance between magnitude spectrograms", || {
        Box::new(SpecL2 {
            plan: StftPlan::new(StftConfig::default()).expect("default STFT config is valid"),
        })
    });
    r
}

/// Loss of one estimate on the graph.
pub fn base_loss(
    g: &mut Graph,
    objective: &dyn Objective,
    t: &TripletVars,
    est: Var,
) -> Result<Var> {
    objective.loss(g, t, est)
}

/// Sum of the loss over every mid-point and final estimate, in the given order.
pub fn hybrid_loss(
    g: &mut Graph,
    objective: &dyn Objective,
    t: &TripletVars,
    estimates: &[Var],
) -> Result<Var> {
    let (first, rest) = estimates
        .split_first()
        .ok_or_else(|| invalid("hybrid loss needs at least one estimate"))?;
    let mut total = objective.loss(g, t, *first)?;
    for &e in rest {
        let l = objective.loss(g, t, e)?;
        total = g.add(total, l)?;
    }
    Ok(total)
}

/// Loss value of a single window, without gradients.
pub fn loss_value(kind: LossKind, x: &[f64], s: &[f64], n: &[f64], est: &[f64]) -> Result<f64> {
    let len = x.len();
    if len == 0 || s.len() != len || n.len() != len || est.len() != len {
        return Err(invalid(format!(
            "window lengths must match and be positive: x {len}, s {}, n {}, estimate {}",
            s.len(),
            n.len(),
            est.len()
        )));
    }
    let row = |v: &[f64]| Tensor::new(vec![1, len], v.to_vec());
    let mut g = Graph::new();
    let t = TripletVars::constants(&mut g, row(x)?, row(s)?, row(n)?)?;
    let e = g.constant(row(est)?);
    let l = kind.objective().loss(&mut g, &t, e)?;
    Ok(g.value(l).item())
}
