//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, RngCore};
use skanet_tensor::{ParamStore, Real, Tensor};

/// Direct six-loop cross-correlation over `[B, C_in, H, W]` with zero
/// padding. Returns the output, its spatial size and the MAC count.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    (b, c_in, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
    stride: usize,
    (ph, pw): (usize, usize),
    dil: usize,
) -> (Vec<f64>, (usize, usize), u64) {
    let ho = (h + 2 * ph - dil * (kh - 1) - 1) / stride + 1;
    let wo = (w + 2 * pw - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; b * c_out * ho * wo];
    let mut macs = 0u64;
    for n in 0..b {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for r in 0..kh {
                            for s in 0..kw {
                                macs += 1;
                                let y = (i * stride + r * dil) as isize - ph as isize;
                                let xx = (j * stride + s * dil) as isize - pw as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x[((n * c_in + c) * h + y as usize) * w + xx as usize]
                                    * k[((o * c_in + c) * kh + r) * kw + s];
                            }
                        }
                    }
                    out[((n * c_out + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (out, (ho, wo), macs)
}

pub fn uniform<T: Real>(rng: &mut dyn RngCore, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(lo..hi)))
}

/// Random parameters and populated batch-norm statistics.
pub fn randomize<T: Real>(store: &mut ParamStore<T>, rng: &mut dyn RngCore) {
    for p in store.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = if p.name.ends_with(".gamma") { uniform(rng, &shape, 0.5, 1.5) } else { uniform(rng, &shape, -1.0, 1.0) };
    }
    for b in store.buffers_mut() {
        let shape = b.value.shape().to_vec();
        b.value = if b.name.ends_with(".running_mean") {
            uniform(rng, &shape, -0.5, 0.5)
        } else if b.name.ends_with(".running_var") {
            uniform(rng, &shape, 0.5, 2.0)
        } else {
            Tensor::ones(shape)
        };
    }
}

pub fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

pub fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}
