use crate::error::{AutodiffError, Result};
use crate::graph::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(Tensor::full(
                c.inputs[0].shape().to_vec(),
                c.grad.item(),
            ))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// ℓ1 norm over every element, subgradient 0 at 0.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().map(|x| x.abs()).sum());
        self.record(out, &[a], |c: &BackwardCtx| {
            let g = c.grad.item();
            vec![Some(c.inputs[0].map(|x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            }))]
        })
    }

    /// Sums over every axis except the leading (batch) axis: `[B, ...] -> [B]`.
    pub fn sum_per_item(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(AutodiffError::InvalidArgument(
                "sum_per_item needs rank >= 1".into(),
            ));
        }
        let b = shape[0];
        let inner = self.value(a).len().checked_div(b).unwrap_or(0);
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(inner.max(1))
            .take(b)
            .map(|c| c.iter().sum())
            .collect();
        Ok(
            self.record(Tensor::from_vec(out), &[a], move |c: &BackwardCtx| {
                let mut g = Vec::with_capacity(b * inner);
                for &gi in c.grad.data() {
                    g.extend(std::iter::repeat_n(gi, inner));
                }
                vec![Some(
                    Tensor::new(c.inputs[0].shape().to_vec(), g).expect("shape"),
                )]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![0.3, -1.0, 7.0]));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        let xx = g.mul(x, x).unwrap();
        let l = g.sum(xx);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn l1_norm_value() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let n = g.l1_norm(x);
        assert_eq!(g.value(n).item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn per_item_sums() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = g.sum_per_item(x).unwrap();
        assert_eq!(g.value(s).data(), &[6.0, 15.0]);
    }
}
