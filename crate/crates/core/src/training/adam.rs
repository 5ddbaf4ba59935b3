use std::collections::BTreeMap;

use mdphd_autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Updates applied so far (bias-correction exponent).
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// Fails with the name of the first parameter whose gradient is NaN or infinite.
pub fn check_finite_grads(stores: &[&ParamStore]) -> Result<()> {
    for p in stores.iter().flat_map(|s| s.iter()) {
        if let Some(bad) = p.grad.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of `{}` contains {bad}",
                p.name()
            )));
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients.
pub fn grad_norm(stores: &[&ParamStore]) -> f64 {
    stores
        .iter()
        .flat_map(|s| s.iter())
        .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(stores: &mut [&mut ParamStore], max_norm: f64) -> f64 {
    let norm = grad_norm(&stores.iter().map(|s| &**s).collect::<Vec<_>>());
    if norm > max_norm {
        let k = max_norm / norm;
        for p in stores.iter_mut().flat_map(|s| s.iter_mut()) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter in `stores` from its `grad`. Gradients
    /// are checked first, so a NaN leaves parameters and moments untouched.
    pub fn step(&mut self, stores: &mut [&mut ParamStore], lr: f64) -> Result<()> {
        check_finite_grads(&stores.iter().map(|s| &**s).collect::<Vec<_>>())?;
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for p in stores.iter_mut().flat_map(|s| s.iter_mut()) {
            let mo = self
                .moments
                .entry(p.name().to_string())
                .or_insert_with(|| Moments {
                    m: p.value.zeros_like(),
                    v: p.value.zeros_like(),
                });
            if mo.m.shape() != p.value.shape() {
                return Err(Error::ContractViolation(format!(
                    "optimizer state of `{}` has the wrong shape",
                    p.name()
                )));
            }
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m)
                .zip(v)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(vec![v])).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0);
        s.get_mut("p").unwrap().grad = Tensor::from_vec(vec![1.0]);
        let mut a = Adam::new(AdamConfig::default());
        a.step(&mut [&mut s], 0.1).unwrap();
        let p = s.get("p").unwrap().value.item();
        assert!((p + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{p}");
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut s = store(0.5);
        let mut a = Adam::new(AdamConfig::default());
        a.step(&mut [&mut s], 0.1).unwrap();
        assert_eq!(s.get("p").unwrap().value.item(), 0.5);

        s.get_mut("p").unwrap().grad = Tensor::from_vec(vec![2.0]);
        a.step(&mut [&mut s], 0.01).unwrap();
        s.zero_grad();
        let (m0, v0) = (a.moments["p"].m.item(), a.moments["p"].v.item());
        a.step(&mut [&mut s], 0.01).unwrap();
        assert!((a.moments["p"].m.item() - 0.9 * m0).abs() < 1e-15);
        assert!((a.moments["p"].v.item() - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = store(1.0);
        s.get_mut("p").unwrap().grad = Tensor::from_vec(vec![f64::NAN]);
        let mut a = Adam::new(AdamConfig::default());
        let err = a.step(&mut [&mut s], 0.1).unwrap_err();
        assert!(err.is_numeric() && err.to_string().contains("`p`"), "{err}");
        assert_eq!(a.t, 0);
        assert_eq!(s.get("p").unwrap().value.item(), 1.0);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        s.get_mut("a").unwrap().grad = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut [&mut s], 1.0), 5.0);
        assert!((grad_norm(&[&s]) - 1.0).abs() < 1e-15);
    }
}
