use crate::error::{AutodiffError, Result};
use crate::graph::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same element count")
}

impl Graph {
    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.record(out, &[a, b], |c: &BackwardCtx| {
            vec![Some(c.grad.clone()), Some(c.grad.clone())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.record(out, &[a, b], |c: &BackwardCtx| {
            vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.record(out, &[a, b], |c: &BackwardCtx| {
            vec![
                Some(zip_map(c.grad, c.inputs[1], |g, y| g * y)),
                Some(zip_map(c.grad, c.inputs[0], |g, x| g * x)),
            ]
        }))
    }

    /// Divides `a` elementwise by a scalar tensor `b`.
    pub fn div_scalar_var(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).len() != 1 {
            return Err(AutodiffError::InvalidArgument(
                "divisor must be a scalar".into(),
            ));
        }
        let d = self.value(b).item();
        let out = self.value(a).map(|x| x / d);
        Ok(self.record(out, &[a, b], move |c: &BackwardCtx| {
            let gb = -c.grad.dot(c.inputs[0]) / (d * d);
            vec![
                Some(c.grad.map(|g| g / d)),
                Some(Tensor::full(c.inputs[1].shape().to_vec(), gb)),
            ]
        }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.record(out, &[a], move |c: &BackwardCtx| {
            vec![Some(c.grad.map(|g| g * factor))]
        })
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let out = self.value(a).map(|x| x + offset);
        self.record(out, &[a], |c: &BackwardCtx| vec![Some(c.grad.clone())])
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g * sign(x)))]
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| 2.0 * g * x))]
        })
    }

    /// Square root with derivative defined as zero at zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(AutodiffError::InvalidArgument(
                "sqrt of a negative value".into(),
            ));
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.output, |g, y| {
                if y > 0.0 {
                    g * 0.5 / y
                } else {
                    0.0
                }
            }))]
        }))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::InvalidArgument(
                "log of a non-positive value".into(),
            ));
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g / x))]
        }))
    }

    /// `max(a, floor)` elementwise; no gradient flows where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: Var) -> Result<Var> {
        self.check_same("clamp_min", a, floor)?;
        let out = zip_map(self.value(a), self.value(floor), f64::max);
        Ok(self.record(out, &[a, floor], |c: &BackwardCtx| {
            let a = c.inputs[0];
            let f = c.inputs[1];
            let ga = zip_map(a, f, |x, y| if x >= y { 1.0 } else { 0.0 });
            let gf = ga.map(|m| 1.0 - m);
            vec![
                Some(zip_map(c.grad, &ga, |g, m| g * m)),
                Some(zip_map(c.grad, &gf, |g, m| g * m)),
            ]
        }))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.record(out, &[a], move |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| {
                if x > 0.0 {
                    g
                } else {
                    slope * g
                }
            }))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(zip_map(c.grad, c.output, |g, y| g * y * (1.0 - y)))]
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
