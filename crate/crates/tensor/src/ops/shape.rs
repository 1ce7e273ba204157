use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn concat_backward<T: Real>(shapes: &[&[usize]], axis: usize, g: &[T]) -> Vec<Vec<T>> {
    let (outer, inner) = outer_inner(shapes[0], axis);
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut parts: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for o in 0..outer {
        let mut offset = 0;
        for (part, s) in parts.iter_mut().zip(shapes) {
            let len = s[axis] * inner;
            let start = o * total * inner + offset;
            part.extend_from_slice(&g[start..start + len]);
            offset += len;
        }
    }
    parts
}

pub(crate) fn narrow_backward<T: Real>(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<T> {
    let (outer, inner) = outer_inner(in_shape, axis);
    let (full, len) = (in_shape[axis], out_shape[axis]);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
    }
    dx
}

impl<T: Real> Tape<T> {
    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let out = {
            let values: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
            let Some(first) = values.first() else {
                return Err(TensorError::InvalidArgument {
                    op: "concat",
                    msg: "no inputs".into(),
                });
            };
            let base = first.shape().to_vec();
            if axis >= base.len() {
                return Err(TensorError::Axis {
                    op: "concat",
                    axis,
                    shape: base,
                });
            }
            for v in &values[1..] {
                let s = v.shape();
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(&base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: base,
                        rhs: s.to_vec(),
                    });
                }
            }
            let (outer, inner) = outer_inner(&base, axis);
            let mut shape = base.clone();
            shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for v in &values {
                    let len = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
                }
            }
            Tensor::new(shape, data)?
        };
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let shape = xv.shape();
            if axis >= shape.len() {
                return Err(TensorError::Axis {
                    op: "narrow",
                    axis,
                    shape: shape.to_vec(),
                });
            }
            if start + len > shape[axis] {
                return Err(TensorError::InvalidArgument {
                    op: "narrow",
                    msg: format!(
                        "range {start}..{} exceeds extent {}",
                        start + len,
                        shape[axis]
                    ),
                });
            }
            let (outer, inner) = outer_inner(shape, axis);
            let full = shape[axis];
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * full + start) * inner;
                data.extend_from_slice(&xv.data()[s..s + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor::new(out_shape, data)?
        };
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }
}
