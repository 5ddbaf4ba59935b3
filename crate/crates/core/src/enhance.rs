//! Whole-signal enhancement: window, estimate, and cross-fade back.

use crate::data::slice_windows;
use crate::error::{invalid, Result};
use crate::hybrid::{HybridModel, InferMode};

/// Triangular weights, strictly positive so every sample is covered.
pub fn triangular(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 1.0 - ((2.0 * i as f64 + 1.0) / len as f64 - 1.0).abs())
        .collect()
}

/// Overlap-adds `window`-long estimates cut every `hop` samples, normalized
/// by the summed triangular weights. The result has exactly `len` samples.
pub fn cross_fade(estimates: &[Vec<f64>], hop: usize, len: usize) -> Result<Vec<f64>> {
    let window = estimates.first().map_or(0, Vec::len);
    if window == 0 || hop == 0 {
        return Err(invalid("need non-empty windows and a positive hop"));
    }
    let w = triangular(window);
    let mut acc = vec![0.0; len];
    let mut norm = vec![0.0; len];
    for (k, est) in estimates.iter().enumerate() {
        if est.len() != window {
            return Err(invalid(format!(
                "window {k} has {} samples, expected {window}",
                est.len()
            )));
        }
        let off = k * hop;
        for i in 0..window.min(len.saturating_sub(off)) {
            acc[off + i] += w[i] * est[i];
            norm[off + i] += w[i];
        }
    }
    if norm.contains(&0.0) {
        return Err(invalid(format!(
            "{} windows with hop {hop} do not cover {len} samples",
            estimates.len()
        )));
    }
    Ok(acc.iter().zip(&norm).map(|(a, n)| a / n).collect())
}

/// Enhances a signal of any length with windows of `window` samples at 50% overlap.
pub fn enhance_signal(
    model: &mut HybridModel,
    samples: &[f64],
    window: usize,
    mode: InferMode,
    batch: usize,
) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(invalid("window must have at least 2 samples"));
    }
    model.check_length(window)?;
    let hop = window / 2;
    let pieces: Vec<Vec<f64>> = slice_windows(samples, window, hop)?
        .into_iter()
        .map(|w| w.samples)
        .collect();
    let mut est = Vec::with_capacity(pieces.len());
    for chunk in pieces.chunks(batch.max(1)) {
        est.extend(model.estimate(chunk, mode)?);
    }
    cross_fade(&est, hop, samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triangle_is_symmetric_and_positive() {
        let w = triangular(8);
        assert!(w.iter().all(|v| *v > 0.0));
        for i in 0..8 {
            assert_eq!(w[i], w[7 - i]);
        }
        assert_eq!(w[3], w[4]);
    }

    proptest! {
        #[test]
        fn cross_fade_reassembles_identity(len in 1usize..300, half in 1usize..20) {
            let window = 2 * half;
            let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let pieces: Vec<Vec<f64>> = slice_windows(&x, window, half).unwrap().into_iter().map(|w| w.samples).collect();
            let y = cross_fade(&pieces, half, len).unwrap();
            prop_assert_eq!(y.len(), len);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
