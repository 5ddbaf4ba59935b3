use crate::error::{AutodiffError, Result};
use crate::graph::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

/// Copies the top-left `(oh, ow)` block of every `(h, w)` plane, zero-filling
/// where the destination exceeds the source.
fn resize_planes(src: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes * oh * ow];
    let ch = h.min(oh);
    let cw = w.min(ow);
    for p in 0..planes {
        for y in 0..ch {
            let s = p * h * w + y * w;
            let d = p * oh * ow + y * ow;
            out[d..d + cw].copy_from_slice(&src[s..s + cw]);
        }
    }
    out
}

impl Graph {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.record(out, &[a], |c: &BackwardCtx| {
            vec![Some(
                c.grad
                    .clone()
                    .reshaped(c.inputs[0].shape().to_vec())
                    .expect("same size"),
            )]
        }))
    }

    /// Resizes the last two axes to `(h, w)`: zero-pads at the bottom/right or
    /// crops keeping the top-left corner. Padding and cropping are adjoint.
    pub fn resize2d(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::InvalidArgument(
                "resize2d needs rank >= 2".into(),
            ));
        }
        let r = shape.len();
        let (ih, iw) = (shape[r - 2], shape[r - 1]);
        let planes: usize = shape[..r - 2].iter().product();
        let mut out_shape = shape.clone();
        out_shape[r - 2] = h;
        out_shape[r - 1] = w;
        let out = Tensor::new(
            out_shape,
            resize_planes(self.value(a).data(), planes, ih, iw, h, w),
        )?;
        Ok(self.record(out, &[a], move |c: &BackwardCtx| {
            let g = resize_planes(c.grad.data(), planes, h, w, ih, iw);
            vec![Some(
                Tensor::new(c.inputs[0].shape().to_vec(), g).expect("shape"),
            )]
        }))
    }

    /// Concatenates along axis 1 (channels). Other axes must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let batch = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut out = Vec::with_capacity((ca + cb) * batch * inner);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for n in 0..batch {
            out.extend_from_slice(&va[n * ca * inner..(n + 1) * ca * inner]);
            out.extend_from_slice(&vb[n * cb * inner..(n + 1) * cb * inner]);
        }
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let out = Tensor::new(shape, out)?;
        Ok(self.record(out, &[a, b], move |c: &BackwardCtx| {
            let g = c.grad.data();
            let mut ga = Vec::with_capacity(batch * ca * inner);
            let mut gb = Vec::with_capacity(batch * cb * inner);
            for n in 0..batch {
                let base = n * (ca + cb) * inner;
                ga.extend_from_slice(&g[base..base + ca * inner]);
                gb.extend_from_slice(&g[base + ca * inner..base + (ca + cb) * inner]);
            }
            vec![
                Some(Tensor::new(c.inputs[0].shape().to_vec(), ga).expect("shape")),
                Some(Tensor::new(c.inputs[1].shape().to_vec(), gb).expect("shape")),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = g.resize2d(x, 3, 4).unwrap();
        assert_eq!(
            g.value(p).data(),
            &[1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let c = g.resize2d(p, 2, 2).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_interleaves_per_batch_item() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }
}
