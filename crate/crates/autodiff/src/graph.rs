//! The differentiation tape.
//!
//! A [`Graph`] records every operation as a node holding its output value,
//! its input handles and a [`Backward`] rule. Nodes are appended in evaluation
//! order, so a reverse sweep over the node list is a valid topological order.

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
}

/// Vector-Jacobian product of a recorded operation.
///
/// Returns one entry per input; `None` means the input receives no gradient.
pub trait Backward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>>;
}

impl<F> Backward for F
where
    F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>,
{
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        self(ctx)
    }
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    backward: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf, never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Differentiable leaf whose gradient can be read from [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Loads a named parameter from `store`. Repeated calls on the same graph
    /// return the same leaf, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.value.clone();
        let v = self.input(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a custom operation. `backward` is only kept when some input
    /// requires a gradient.
    pub fn record(
        &mut self,
        value: Tensor,
        inputs: &[Var],
        backward: impl Backward + 'static,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let backward: Option<Box<dyn Backward>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(value, inputs.to_vec(), backward, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        backward: Option<Box<dyn Backward>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            backward,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(shape, 1.0));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(rule) = &node.backward else {
                leaves.insert(i, grad);
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &grad,
            };
            let input_grads = rule.backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (inp, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let by_param = self
            .params
            .iter()
            .filter_map(|(name, v)| leaves.get(&v.0).map(|g| (name.clone(), g.clone())))
            .collect();
        self.nodes.clear();
        self.params.clear();
        Ok(Gradients { leaves, by_param })
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    by_param: HashMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of a differentiable leaf; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    /// Adds (`+=`) every parameter gradient whose name exists in `store`.
    /// Returns how many parameters were touched.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> usize {
        let mut touched = 0;
        for p in store.iter_mut() {
            if let Some(g) = self.by_param.get(p.name()) {
                p.grad.add_assign(g);
                touched += 1;
            }
        }
        touched
    }
}
