//! Reductions, softmax and the cross-entropy loss.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_backward<T: Real>(shape: &[usize], y: &[T], axis: usize, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
            for k in 0..len {
                dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
            }
        }
    }
    dx
}

pub(crate) fn gap_backward<T: Real>(shape: &[usize], g: &[T]) -> Vec<T> {
    let inner: usize = shape[2..].iter().product();
    let scale = T::one() / T::lit(inner as f64);
    g.iter()
        .flat_map(|&gv| std::iter::repeat_n(gv * scale, inner))
        .collect()
}

pub(crate) fn cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    eps: T,
    g: T,
) -> Vec<T> {
    let k = probs.shape()[1];
    let scale = g / T::lit(labels.len() as f64);
    let mut d = vec![T::zero(); probs.numel()];
    for (i, &y) in labels.iter().enumerate() {
        d[i * k + y] = -scale / (probs.data()[i * k + y] + eps);
    }
    d
}

impl<T: Real> Tape<T> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            if axis >= xv.rank() {
                return Err(TensorError::Axis {
                    op: "softmax",
                    axis,
                    shape: xv.shape().to_vec(),
                });
            }
            let (outer, len, inner) = axis_split(xv.shape(), axis);
            let src = xv.data();
            let mut data = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let max = (0..len)
                        .map(|k| src[idx(k)])
                        .fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for k in 0..len {
                        let e = (src[idx(k)] - max).exp();
                        data[idx(k)] = e;
                        total += e;
                    }
                    for k in 0..len {
                        data[idx(k)] /= total;
                    }
                }
            }
            Tensor::new(xv.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Spatial mean: `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            if xv.rank() != 4 {
                return Err(TensorError::Rank {
                    op: "global_avg_pool",
                    expected: 4,
                    shape: xv.shape().to_vec(),
                });
            }
            let s = xv.shape();
            let inner = s[2] * s[3];
            let data = xv
                .data()
                .chunks(inner)
                .map(|c| c.iter().copied().sum::<T>() / T::lit(inner as f64))
                .collect();
            Tensor::new(vec![s[0], s[1]], data)?
        };
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&self, x: Var) -> Var {
        let mean = {
            let xv = self.value(x);
            xv.data().iter().copied().sum::<T>() / T::lit(xv.numel() as f64)
        };
        self.push(Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    /// `-(1/B) Σ_i log(probs[i, y_i] + eps)` over rows of `probs[B,K]`.
    pub fn cross_entropy(&self, probs: Var, labels: &[usize], eps: f64) -> Result<Var> {
        let eps = T::lit(eps);
        let loss = {
            let pv = self.value(probs);
            if pv.rank() != 2 || pv.shape()[0] != labels.len() || labels.is_empty() {
                return Err(TensorError::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: pv.shape().to_vec(),
                    rhs: vec![labels.len()],
                });
            }
            let k = pv.shape()[1];
            let mut total = T::zero();
            for (i, &y) in labels.iter().enumerate() {
                if y >= k {
                    return Err(TensorError::LabelOutOfRange {
                        label: y,
                        classes: k,
                    });
                }
                total += (pv.data()[i * k + y] + eps).ln();
            }
            -total / T::lit(labels.len() as f64)
        };
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
            eps,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[probs]))
    }
}
