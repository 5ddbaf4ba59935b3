//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::AutodiffError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Step is `relative_step * (1 + |v|)` for a coordinate with value `v`.
    pub relative_step: f64,
    /// Coordinates checked per input; larger inputs are subsampled.
    pub max_coords: usize,
    /// Fraction of the largest numeric gradient used as the denominator floor.
    pub floor_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            relative_step: 1e-5,
            max_coords: 64,
            floor_fraction: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, floor)` over all checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error || other.max_rel_error.is_nan() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for every tensor in `inputs`.
///
/// `f` must be a pure function of its inputs; it is called once for the
/// analytic pass and twice per checked coordinate.
pub fn check_gradients<F, E>(
    inputs: &[Tensor],
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| t.zeros_like()))
        .collect();

    let mut eval = |perturbed: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= opts.max_coords {
            (0..input.len()).collect()
        } else {
            let mut c = sample(&mut rng, input.len(), opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let v = input.data()[i];
            let h = opts.relative_step * (1.0 + v.abs());
            work[which].data_mut()[i] = v + h;
            let up = eval(&work)?;
            work[which].data_mut()[i] = v - h;
            let down = eval(&work)?;
            work[which].data_mut()[i] = v;
            numeric.push((up - down) / (2.0 * h));
        }
        let floor = opts.floor_fraction * numeric.iter().fold(0.0f64, |m, n| m.max(n.abs()))
            + f64::MIN_POSITIVE;
        for (&i, &n) in coords.iter().zip(&numeric) {
            let a = analytic[which].data()[i];
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some(Mismatch {
                    input: which,
                    index: i,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }
    Ok(report)
}
