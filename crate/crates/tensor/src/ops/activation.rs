//! Elementwise maps and broadcasting products.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops::norm::Mode;
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn swish<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn swish_backward<T: Real>(x: &[T], g: &[T]) -> Vec<T> {
    x.iter()
        .zip(g)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * (s + x * s * (T::one() - s))
        })
        .collect()
}

pub(crate) fn sigmoid_backward<T: Real>(y: &[T], g: &[T]) -> Vec<T> {
    y.iter()
        .zip(g)
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect()
}

pub(crate) fn relu_backward<T: Real>(x: &[T], g: &[T]) -> Vec<T> {
    x.iter()
        .zip(g)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

pub(crate) fn scale_channels_backward<T: Real>(
    x: &Tensor<T>,
    s: &[T],
    g: &[T],
) -> (Vec<T>, Vec<T>) {
    let inner: usize = x.shape()[2..].iter().product();
    let mut dx = vec![T::zero(); g.len()];
    let mut ds = vec![T::zero(); s.len()];
    for (k, &sv) in s.iter().enumerate() {
        let range = k * inner..(k + 1) * inner;
        let mut acc = T::zero();
        for i in range {
            dx[i] = g[i] * sv;
            acc += g[i] * x.data()[i];
        }
        ds[k] = acc;
    }
    (dx, ds)
}

impl<T: Real> Tape<T> {
    fn map_unary(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| f(v)).collect(),
        )
        .expect("shape")
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&self, x: Var) -> Var {
        let out = self.map_unary(x, swish);
        self.push(out, Op::Swish(x), &[x])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.map_unary(x, sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.map_unary(x, |v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| *x + *y)
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| *x * *y)
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x[B,C,...] * s[B,C]` broadcast over the trailing axes.
    pub fn scale_channels(&self, x: Var, s: Var) -> Result<Var> {
        let out = {
            let (xv, sv) = (self.value(x), self.value(s));
            if xv.rank() < 2 || sv.shape() != &xv.shape()[..2] {
                return Err(TensorError::ShapeMismatch {
                    op: "scale_channels",
                    lhs: xv.shape().to_vec(),
                    rhs: sv.shape().to_vec(),
                });
            }
            let inner: usize = xv.shape()[2..].iter().product();
            let mut data = xv.data().to_vec();
            for (chunk, &k) in data.chunks_mut(inner.max(1)).zip(sv.data()) {
                for v in chunk {
                    *v *= k;
                }
            }
            Tensor::new(xv.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::ScaleChannels { x, s }, &[x, s]))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in Train mode;
    /// Eval mode and `p == 0` pass `x` through untouched.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                msg: format!("probability {p} outside [0, 1)"),
            });
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let (out, mask) = {
            let xv = self.value(x);
            let mask: Vec<T> = (0..xv.numel())
                .map(|_| {
                    if rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let data = xv.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
            (Tensor::new(xv.shape().to_vec(), data)?, mask)
        };
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }
}
