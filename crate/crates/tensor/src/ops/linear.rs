use crate::error::{Result, TensorError};
use crate::real::{gemm, MatRef, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (b, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = w.shape()[0];
    let mut dx = vec![T::zero(); b * n_in];
    gemm(
        T::one(),
        MatRef::new(g, b, n_out),
        MatRef::new(w.data(), n_out, n_in),
        T::zero(),
        &mut dx,
    );
    let mut dw = vec![T::zero(); n_out * n_in];
    gemm(
        T::one(),
        MatRef::new(g, b, n_out).t(),
        MatRef::new(x.data(), b, n_in),
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); n_out];
    for row in g.chunks(n_out) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += *v;
        }
    }
    (dx, dw, db)
}

impl<T: Real> Tape<T> {
    /// `x[B,N_in] · weight[N_out,N_in]ᵀ + bias`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = {
            let (xv, wv) = (self.value(x), self.value(weight));
            if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[1] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    lhs: xv.shape().to_vec(),
                    rhs: wv.shape().to_vec(),
                });
            }
            let (b, n_in, n_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
            let mut data = vec![T::zero(); b * n_out];
            gemm(
                T::one(),
                MatRef::new(xv.data(), b, n_in),
                MatRef::new(wv.data(), n_out, n_in).t(),
                T::zero(),
                &mut data,
            );
            if let Some(bias) = bias {
                let bv = self.value(bias);
                if bv.shape() != [n_out] {
                    return Err(TensorError::ShapeMismatch {
                        op: "linear bias",
                        lhs: vec![n_out],
                        rhs: bv.shape().to_vec(),
                    });
                }
                for row in data.chunks_mut(n_out) {
                    for (v, bb) in row.iter_mut().zip(bv.data()) {
                        *v += *bb;
                    }
                }
            }
            Tensor::new(vec![b, n_out], data)?
        };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Linear {
                x,
                w: weight,
                b: bias,
            },
            &inputs,
        ))
    }
}
