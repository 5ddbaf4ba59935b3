use mdphd_autodiff::init::kaiming_uniform;
use mdphd_autodiff::{Graph, NormMode, ParamStore, RenormState, Tensor, Var};
use rand::Rng;

use super::NamedRenorm;
use crate::error::Result;

/// Registers parameters under a common name prefix.
pub(crate) struct Builder<'a, R: Rng> {
    pub prefix: &'a str,
    pub store: &'a mut ParamStore,
    pub renorm: &'a mut Vec<NamedRenorm>,
    pub rng: &'a mut R,
    pub momentum: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn full(&self, layer: &str, part: &str) -> String {
        format!("{}.{layer}.{part}", self.prefix)
    }

    pub fn kernel(&mut self, layer: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let t = kaiming_uniform(shape, fan_in, self.rng);
        self.store.insert(self.full(layer, "kernel"), t)?;
        Ok(())
    }

    pub fn bias(&mut self, layer: &str, len: usize) -> Result<()> {
        self.store
            .insert(self.full(layer, "bias"), Tensor::zeros(vec![len]))?;
        Ok(())
    }

    /// `gamma = 1`, `beta = 0` and fresh running statistics.
    pub fn renorm(&mut self, layer: &str, channels: usize) -> Result<()> {
        self.store
            .insert(self.full(layer, "gamma"), Tensor::full(vec![channels], 1.0))?;
        self.store
            .insert(self.full(layer, "beta"), Tensor::zeros(vec![channels]))?;
        self.renorm.push(NamedRenorm {
            name: format!("{}.{layer}", self.prefix),
            state: RenormState::new(channels, self.momentum),
        });
        Ok(())
    }
}

/// Loads `{prefix}.{layer}.{part}` onto the graph.
pub(crate) fn load(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layer: &str,
    part: &str,
) -> Result<Var> {
    Ok(g.param(store, &format!("{prefix}.{layer}.{part}"))?)
}

pub(crate) fn add_bias(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layer: &str,
    x: Var,
) -> Result<Var> {
    let b = load(g, store, prefix, layer, "bias")?;
    Ok(g.add_channel_bias(x, b)?)
}

/// Applies the renorm layer `{prefix}.{layer}`, whose state lives in `states`.
pub(crate) fn renorm(
    g: &mut Graph,
    store: &ParamStore,
    states: &mut [NamedRenorm],
    prefix: &str,
    layer: &str,
    x: Var,
    mode: NormMode,
) -> Result<Var> {
    let gamma = load(g, store, prefix, layer, "gamma")?;
    let beta = load(g, store, prefix, layer, "beta")?;
    let full = format!("{prefix}.{layer}");
    let slot = states
        .iter_mut()
        .find(|s| s.name == full)
        .expect("renorm state registered with its layer");
    Ok(g.batch_renorm(x, gamma, beta, &mut slot.state, mode)?)
}
