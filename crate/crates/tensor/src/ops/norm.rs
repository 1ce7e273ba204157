use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Whether layers use batch statistics and stochastic regularisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Running statistics of one batch-norm layer.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormOptions {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// `(outer, channels, inner)` split of a `[N, C, ...]` shape.
fn split_channels(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

impl<T: Real> Tape<T> {
    /// Per-channel normalisation over every axis except axis 1.
    ///
    /// Train mode normalises with biased batch statistics and folds the
    /// unbiased batch variance into `stats`; Eval mode reads `stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats<'_, T>,
        mode: Mode,
        opts: BatchNormOptions,
    ) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let xv = self.value(x);
            let shape = xv.shape();
            if shape.len() < 2 {
                return Err(TensorError::Rank {
                    op: "batch_norm",
                    expected: 2,
                    shape: shape.to_vec(),
                });
            }
            let (outer, c, inner) = split_channels(shape);
            let gv = self.value(gamma);
            let bv = self.value(beta);
            for (name, len) in [
                ("gamma", gv.numel()),
                ("beta", bv.numel()),
                ("running mean", stats.mean.len()),
                ("running var", stats.var.len()),
            ] {
                if len != c {
                    return Err(TensorError::InvalidArgument {
                        op: "batch_norm",
                        msg: format!("{name} has {len} entries but input has {c} channels"),
                    });
                }
            }
            let data = xv.data();
            let count = outer * inner;
            let eps = opts.eps;
            let mut mean = vec![0.0f64; c];
            let mut inv_std = vec![T::zero(); c];
            match mode {
                Mode::Train => {
                    let mut var = vec![0.0f64; c];
                    for ch in 0..c {
                        let mut s = 0.0;
                        for o in 0..outer {
                            let base = (o * c + ch) * inner;
                            s += data[base..base + inner]
                                .iter()
                                .map(|v| v.as_f64())
                                .sum::<f64>();
                        }
                        let m = s / count as f64;
                        let mut ss = 0.0;
                        for o in 0..outer {
                            let base = (o * c + ch) * inner;
                            ss += data[base..base + inner]
                                .iter()
                                .map(|v| {
                                    let d = v.as_f64() - m;
                                    d * d
                                })
                                .sum::<f64>();
                        }
                        mean[ch] = m;
                        var[ch] = ss / count as f64;
                    }
                    let mom = opts.momentum;
                    for ch in 0..c {
                        inv_std[ch] = T::lit(1.0 / (var[ch] + eps).sqrt());
                        let unbiased = if count > 1 {
                            var[ch] * count as f64 / (count - 1) as f64
                        } else {
                            var[ch]
                        };
                        stats.mean[ch] =
                            T::lit((1.0 - mom) * stats.mean[ch].as_f64() + mom * mean[ch]);
                        stats.var[ch] =
                            T::lit((1.0 - mom) * stats.var[ch].as_f64() + mom * unbiased);
                    }
                }
                Mode::Eval => {
                    for ch in 0..c {
                        mean[ch] = stats.mean[ch].as_f64();
                        inv_std[ch] = T::lit(1.0 / (stats.var[ch].as_f64() + eps).sqrt());
                    }
                }
            }
            let mut xhat = vec![T::zero(); data.len()];
            let mut out = vec![T::zero(); data.len()];
            let (g, b) = (gv.data(), bv.data());
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    let m = T::lit(mean[ch]);
                    for i in base..base + inner {
                        let h = (data[i] - m) * inv_std[ch];
                        xhat[i] = h;
                        out[i] = g[ch] * h + b[ch];
                    }
                }
            }
            (Tensor::new(shape.to_vec(), out)?, xhat, inv_std)
        };
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: mode == Mode::Train,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }
}

pub(crate) fn batchnorm_backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (outer, c, inner) = split_channels(shape);
    let count = T::lit((outer * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                dgamma[ch] += g[i] * xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            let scale = gamma[ch] * inv_std[ch];
            if train {
                let k = scale / count;
                for i in base..base + inner {
                    dx[i] = k * (count * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                }
            } else {
                for i in base..base + inner {
                    dx[i] = scale * g[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
