//! Differentiable spectral operations on an autodiff [`Graph`].
//!
//! Complex spectra are carried as real tensors of shape `[B, 2, T, F]`:
//! channel 0 holds real parts and channel 1 imaginary parts.

use mdphd_autodiff::{AutodiffError, BackwardCtx, Graph, Tensor, Var};

use super::StftPlan;
use crate::error::{invalid, Result};

fn batch_len(g: &Graph, x: Var) -> Result<(usize, usize)> {
    match *g.shape(x) {
        [b, l] if l > 0 => Ok((b, l)),
        ref s => Err(invalid(format!(
            "expected a non-empty [batch, samples] waveform tensor, got {s:?}"
        ))),
    }
}

fn spectrum_dims(g: &Graph, z: Var, plan: &StftPlan) -> Result<(usize, usize, usize)> {
    match *g.shape(z) {
        [b, 2, t, f] if f == plan.num_bins() => Ok((b, t, f)),
        ref s => Err(invalid(format!(
            "expected a [batch, 2, frames, {}] spectrum tensor, got {s:?}",
            plan.num_bins()
        ))),
    }
}

/// Batched STFT: `[B, L] -> [B, 2, T, F]`.
pub fn stft(g: &mut Graph, plan: &StftPlan, x: Var) -> Result<Var> {
    let (b, len) = batch_len(g, x)?;
    let (t, f) = (plan.num_frames(len), plan.num_bins());
    let plane = t * f;
    let mut out = vec![0.0; b * 2 * plane];
    for (item, chunk) in g.value(x).data().chunks(len).zip(out.chunks_mut(2 * plane)) {
        let (re, im) = chunk.split_at_mut(plane);
        plan.analyze(item, re, im);
    }
    let plan = plan.clone();
    let value = Tensor::new(vec![b, 2, t, f], out)?;
    Ok(g.record(value, &[x], move |c: &BackwardCtx| {
        let mut gx = Vec::with_capacity(b * len);
        for chunk in c.grad.data().chunks(2 * plane) {
            let (gre, gim) = chunk.split_at(plane);
            gx.extend(plan.analyze_adjoint(gre, gim, len));
        }
        vec![Some(Tensor::new(vec![b, len], gx).expect("shape"))]
    }))
}

/// Batched inverse STFT: `[B, 2, T, F] -> [B, len]`.
pub fn istft(g: &mut Graph, plan: &StftPlan, z: Var, len: usize) -> Result<Var> {
    let (b, t, f) = spectrum_dims(g, z, plan)?;
    if len == 0 || plan.num_frames(len) != t {
        return Err(invalid(format!(
            "{t} frames cannot reconstruct {len} samples"
        )));
    }
    let plane = t * f;
    let mut out = Vec::with_capacity(b * len);
    for chunk in g.value(z).data().chunks(2 * plane) {
        let (re, im) = chunk.split_at(plane);
        out.extend(plan.synthesize(re, im, len)?);
    }
    let plan = plan.clone();
    let value = Tensor::new(vec![b, len], out)?;
    Ok(g.record(value, &[z], move |c: &BackwardCtx| {
        let mut gz = vec![0.0; b * 2 * plane];
        for (gy, chunk) in c.grad.data().chunks(len).zip(gz.chunks_mut(2 * plane)) {
            let (gre, gim) = chunk.split_at_mut(plane);
            plan.synthesize_adjoint(gy, gre, gim)
                .expect("envelope checked in forward");
        }
        vec![Some(Tensor::new(vec![b, 2, t, f], gz).expect("shape"))]
    }))
}

fn split_planes(z: &Tensor) -> Result<(usize, usize)> {
    match *z.shape() {
        [b, 2, t, f] => Ok((b, t * f)),
        ref s => Err(invalid(format!(
            "expected a [batch, 2, frames, bins] spectrum tensor, got {s:?}"
        ))),
    }
}

/// `|z|` per bin: `[B, 2, T, F] -> [B, T, F]`. The derivative at zero is zero.
pub fn magnitude(g: &mut Graph, z: Var) -> Result<Var> {
    let (b, plane) = split_planes(g.value(z))?;
    let shape = g.shape(z).to_vec();
    let mut out = Vec::with_capacity(b * plane);
    for chunk in g.value(z).data().chunks(2 * plane) {
        let (re, im) = chunk.split_at(plane);
        out.extend(re.iter().zip(im).map(|(r, i)| r.hypot(*i)));
    }
    let value = Tensor::new(vec![b, shape[2], shape[3]], out)?;
    Ok(g.record(value, &[z], move |c: &BackwardCtx| {
        let mut gz = vec![0.0; b * 2 * plane];
        let zin = c.inputs[0].data();
        for item in 0..b {
            for k in 0..plane {
                let m = c.output.data()[item * plane + k];
                if m > 0.0 {
                    let gm = c.grad.data()[item * plane + k] / m;
                    let base = item * 2 * plane;
                    gz[base + k] = gm * zin[base + k];
                    gz[base + plane + k] = gm * zin[base + plane + k];
                }
            }
        }
        vec![Some(Tensor::new(shape.clone(), gz).expect("shape"))]
    }))
}

/// `ln(max(|z|, floor))` per bin: `[B, 2, T, F] -> [B, T, F]`.
/// No gradient flows where the floor is active.
pub fn log_magnitude(g: &mut Graph, z: Var, floor: f64) -> Result<Var> {
    if floor <= 0.0 || !floor.is_finite() {
        return Err(invalid(format!(
            "log-magnitude floor must be positive, got {floor}"
        )));
    }
    let (b, plane) = split_planes(g.value(z))?;
    let shape = g.shape(z).to_vec();
    let mut out = Vec::with_capacity(b * plane);
    for chunk in g.value(z).data().chunks(2 * plane) {
        let (re, im) = chunk.split_at(plane);
        out.extend(re.iter().zip(im).map(|(r, i)| r.hypot(*i).max(floor).ln()));
    }
    let value = Tensor::new(vec![b, shape[2], shape[3]], out)?;
    Ok(g.record(value, &[z], move |c: &BackwardCtx| {
        let mut gz = vec![0.0; b * 2 * plane];
        let zin = c.inputs[0].data();
        for item in 0..b {
            let base = item * 2 * plane;
            for k in 0..plane {
                let (r, i) = (zin[base + k], zin[base + plane + k]);
                let p = r * r + i * i;
                if p.sqrt() > floor {
                    let gl = c.grad.data()[item * plane + k] / p;
                    gz[base + k] = gl * r;
                    gz[base + plane + k] = gl * i;
                }
            }
        }
        vec![Some(Tensor::new(shape.clone(), gz).expect("shape"))]
    }))
}

/// Scales each complex bin of `z` (`[B, 2, T, F]`) by `mask` (`[B, T, F]`).
pub fn apply_mask(g: &mut Graph, z: Var, mask: Var) -> Result<Var> {
    let (b, plane) = split_planes(g.value(z))?;
    let zs = g.shape(z).to_vec();
    if g.shape(mask) != [zs[0], zs[2], zs[3]] {
        return Err(AutodiffError::ShapeMismatch {
            op: "apply_mask",
            lhs: zs,
            rhs: g.shape(mask).to_vec(),
        }
        .into());
    }
    let (zv, mv) = (g.value(z).data(), g.value(mask).data());
    let mut out = vec![0.0; b * 2 * plane];
    for item in 0..b {
        for ch in 0..2 {
            let base = (item * 2 + ch) * plane;
            for k in 0..plane {
                out[base + k] = mv[item * plane + k] * zv[base + k];
            }
        }
    }
    let value = Tensor::new(zs.clone(), out)?;
    Ok(g.record(value, &[z, mask], move |c: &BackwardCtx| {
        let (zv, mv, gv) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
        let mut gz = vec![0.0; b * 2 * plane];
        let mut gm = vec![0.0; b * plane];
        for item in 0..b {
            for ch in 0..2 {
                let base = (item * 2 + ch) * plane;
                for k in 0..plane {
                    gz[base + k] = mv[item * plane + k] * gv[base + k];
                    gm[item * plane + k] += zv[base + k] * gv[base + k];
                }
            }
        }
        vec![
            Some(Tensor::new(zs.clone(), gz).expect("shape")),
            Some(Tensor::new(c.inputs[1].shape().to_vec(), gm).expect("shape")),
        ]
    }))
}
