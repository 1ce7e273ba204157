use rand::RngCore;
use skanet_tensor::{ParamStore, Real, Tensor, Var};

use super::layers::{BatchNorm, Conv, Fwd};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum AcbForm {
    /// Parallel 3x3, 1x3 and 3x1 convolutions, each with its own batch norm.
    Train { k3x3: Conv, k1x3: Conv, k3x1: Conv, bn: [BatchNorm; 3] },
    /// Single 3x3 convolution with bias.
    Fused { conv: Conv },
}

/// Asymmetric convolution block.
#[derive(Clone, Copy, Debug)]
pub struct Acb {
    pub form: AcbForm,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub dilation: usize,
}

/// Folded kernel and bias equivalent to an Eval-mode [`Acb`].
#[derive(Clone, Debug, PartialEq)]
pub struct FusedAcb<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl Acb {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        dilation: usize,
        fused: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let conv = |store: &mut ParamStore<T>, branch: &str, k, bias, rng: &mut dyn RngCore| {
            Conv::new(store, &format!("{name}.{branch}"), c_in, c_out, k, stride, dilation, bias, rng)
        };
        let form = if fused {
            AcbForm::Fused { conv: conv(store, "fused", (3, 3), true, rng)? }
        } else {
            AcbForm::Train {
                k3x3: conv(store, "k3x3", (3, 3), false, rng)?,
                k1x3: conv(store, "k1x3", (1, 3), false, rng)?,
                k3x1: conv(store, "k3x1", (3, 1), false, rng)?,
                bn: [
                    BatchNorm::new(store, &format!("{name}.bn3x3"), c_out)?,
                    BatchNorm::new(store, &format!("{name}.bn1x3"), c_out)?,
                    BatchNorm::new(store, &format!("{name}.bn3x1"), c_out)?,
                ],
            }
        };
        Ok(Self { form, c_in, c_out, stride, dilation })
    }

    /// Sum of the branch outputs before the activation.
    pub fn forward_pre<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        match &self.form {
            AcbForm::Train { k3x3, k1x3, k3x1, bn } => {
                let mut acc: Option<Var> = None;
                for (conv, bn) in [k3x3, k1x3, k3x1].into_iter().zip(bn) {
                    let y = conv.forward(f, x)?;
                    let y = bn.forward(f, y)?;
                    acc = Some(match acc {
                        Some(a) => f.tape.add(a, y)?,
                        None => y,
                    });
                }
                Ok(acc.expect("three branches"))
            }
            AcbForm::Fused { conv } => conv.forward(f, x),
        }
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward_pre(f, x)?;
        Ok(f.tape.swish(y))
    }

    /// Kernel taps the block applies, in train or fused form.
    pub fn kernels(&self) -> Vec<&Conv> {
        match &self.form {
            AcbForm::Train { k3x3, k1x3, k3x1, .. } => vec![k3x3, k1x3, k3x1],
            AcbForm::Fused { conv } => vec![conv],
        }
    }
}

/// Folds each branch's batch norm into its kernel, embeds the 1x3 and 3x1
/// kernels in the centre row and column of a 3x3 kernel and sums.
pub fn acb_fuse<T: Real>(store: &ParamStore<T>, acb: &Acb) -> Result<FusedAcb<T>> {
    let AcbForm::Train { k3x3, k1x3, k3x1, bn } = &acb.form else {
        return Err(Error::InvalidSpec("block is already fused".into()));
    };
    let (co, ci) = (acb.c_out, acb.c_in);
    let mut kernel = vec![0.0f64; co * ci * 9];
    let mut bias = vec![0.0f64; co];
    for (conv, bn) in [k3x3, k1x3, k3x1].into_iter().zip(bn) {
        let (scale, shift) = bn.fold(store)?;
        let (kh, kw) = conv.kernel;
        let w = store.param(conv.weight).value.data();
        // offset of this kernel inside the 3x3 grid
        let (r0, c0) = ((3 - kh) / 2, (3 - kw) / 2);
        for o in 0..co {
            for i in 0..ci {
                for r in 0..kh {
                    for c in 0..kw {
                        let src = ((o * ci + i) * kh + r) * kw + c;
                        let dst = ((o * ci + i) * 3 + r + r0) * 3 + c + c0;
                        kernel[dst] += scale[o] * w[src].as_f64();
                    }
                }
            }
            bias[o] += shift[o];
        }
    }
    Ok(FusedAcb {
        kernel: Tensor::new(vec![co, ci, 3, 3], kernel.into_iter().map(T::lit).collect())?,
        bias: Tensor::new(vec![co], bias.into_iter().map(T::lit).collect())?,
    })
}
