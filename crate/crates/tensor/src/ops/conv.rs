//! 2-D cross-correlation via im2col + GEMM.

use std::borrow::Cow;

use crate::error::{Result, TensorError};
use crate::real::{gemm, MatRef, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    /// Zero padding as (rows, columns).
    pub padding: (usize, usize),
    pub dilation: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: (0, 0),
            dilation: 1,
        }
    }
}

impl Conv2dOptions {
    /// Padding that preserves spatial size at stride 1 for odd kernels. A 1×3
    /// kernel pads only columns, a 3×1 kernel only rows.
    pub fn same(kh: usize, kw: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2),
            dilation,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// Output extent along one axis, `None` when the kernel does not fit.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    padding: usize,
    stride: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], opts: Conv2dOptions) -> Result<Self> {
        if x.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d input",
                expected: 4,
                shape: x.to_vec(),
            });
        }
        if k.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d kernel",
                expected: 4,
                shape: k.to_vec(),
            });
        }
        if x[1] != k[1] {
            return Err(TensorError::ConvGeometry(format!(
                "input has {} channels but kernel {:?} expects {}",
                x[1], k, k[1]
            )));
        }
        if opts.stride == 0 || opts.dilation == 0 {
            return Err(TensorError::ConvGeometry(
                "stride and dilation must be positive".into(),
            ));
        }
        let h_out = conv_output_size(x[2], k[2], opts.padding.0, opts.stride, opts.dilation);
        let w_out = conv_output_size(x[3], k[3], opts.padding.1, opts.stride, opts.dilation);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(TensorError::ConvGeometry(format!(
                "kernel {}x{} (dilation {}) does not fit input {}x{} with padding {:?}",
                k[2], k[3], opts.dilation, x[2], x[3], opts.padding
            )));
        };
        Ok(Self {
            batch: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: k[0],
            kh: k[2],
            kw: k[3],
            stride: opts.stride,
            pad_h: opts.padding.0,
            pad_w: opts.padding.1,
            dilation: opts.dilation,
            h_out,
            w_out,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.h_out, self.w_out]
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }

    /// Valid output-column range `[lo, hi)` for kernel column offset `off`
    /// when the stride is one.
    fn valid_cols(&self, off: isize) -> (usize, usize) {
        let w_out = self.w_out as isize;
        let lo = (-off).clamp(0, w_out);
        let hi = (self.w as isize - off).clamp(lo, w_out);
        (lo as usize, hi as usize)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let off = (j * g.dilation) as isize - g.pad_w as isize;
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + i * g.dilation) as isize - g.pad_h as isize;
                    let dst = &mut row[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_cols(off);
                        dst[..lo].fill(T::zero());
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                        dst[hi..].fill(T::zero());
                    } else {
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * g.stride) as isize + off;
                            *d = if iw >= 0 && iw < g.w as isize {
                                src[iw as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let off = (j * g.dilation) as isize - g.pad_w as isize;
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + i * g.dilation) as isize - g.pad_h as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src = &row[oh * g.w_out..(oh + 1) * g.w_out];
                    let dst = &mut dxc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_cols(off);
                        if hi == lo {
                            continue;
                        }
                        let d0 = (lo as isize + off) as usize;
                        for (d, s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += *s;
                        }
                    } else {
                        for (ow, s) in src.iter().enumerate() {
                            let iw = (ow * g.stride) as isize + off;
                            if iw >= 0 && iw < g.w as isize {
                                dst[iw as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn columns<'a, T: Real>(x_b: &'a [T], g: &ConvGeom, scratch: &'a mut Vec<T>) -> Cow<'a, [T]> {
    if g.is_pointwise() {
        Cow::Borrowed(x_b)
    } else {
        scratch.resize(g.patch_len() * g.positions(), T::zero());
        im2col(x_b, g, scratch);
        Cow::Borrowed(&scratch[..])
    }
}

/// Forward pass on raw buffers. Output is `[batch, c_out, h_out, w_out]`.
pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (p, k) = (g.positions(), g.patch_len());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut scratch = Vec::new();
    for b in 0..g.batch {
        let cols = columns(&x[b * in_len..(b + 1) * in_len], g, &mut scratch);
        let out_b = &mut out[b * out_len..(b + 1) * out_len];
        gemm(
            T::one(),
            MatRef::new(w, g.c_out, k),
            MatRef::new(&cols, k, p),
            T::zero(),
            out_b,
        );
        if let Some(bias) = bias {
            for (o, bv) in out_b.chunks_mut(p).zip(bias) {
                for v in o {
                    *v += *bv;
                }
            }
        }
    }
    out
}

type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (p, k) = (g.positions(), g.patch_len());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = need_db.then(|| vec![T::zero(); g.c_out]);
    let mut scratch = Vec::new();
    let mut dcols = Vec::new();
    for b in 0..g.batch {
        let gout_b = &gout[b * out_len..(b + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (d, row) in db.iter_mut().zip(gout_b.chunks(p)) {
                *d += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let cols = columns(&x[b * in_len..(b + 1) * in_len], g, &mut scratch);
            gemm(
                T::one(),
                MatRef::new(gout_b, g.c_out, p),
                MatRef::new(&cols, k, p).t(),
                T::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dx_b = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(
                    T::one(),
                    MatRef::new(w, g.c_out, k).t(),
                    MatRef::new(gout_b, g.c_out, p),
                    T::zero(),
                    dx_b,
                );
            } else {
                dcols.resize(k * p, T::zero());
                gemm(
                    T::one(),
                    MatRef::new(w, g.c_out, k).t(),
                    MatRef::new(gout_b, g.c_out, p),
                    T::zero(),
                    &mut dcols,
                );
                col2im(&dcols, g, dx_b);
            }
        }
    }
    (dx, dw, db)
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x[B,C_in,H,W]` with `kernel[C_out,C_in,kh,kw]`.
    pub fn conv2d(
        &self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    ) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let kv = self.value(kernel);
            let geom = ConvGeom::new(xv.shape(), kv.shape(), opts)?;
            let bv = bias.map(|b| self.value(b));
            if let Some(bv) = &bv {
                if bv.shape() != [geom.c_out] {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: vec![geom.c_out],
                        rhs: bv.shape().to_vec(),
                    });
                }
            }
            let out = conv2d_forward(xv.data(), kv.data(), bv.as_ref().map(|b| b.data()), &geom);
            (Tensor::new(geom.output_shape().to_vec(), out)?, geom)
        };
        let (out, geom) = value;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w: kernel,
                b: bias,
                geom,
            },
            &inputs,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(5, 3, 2, 1, 2), Some(5));
        assert_eq!(conv_output_size(8, 3, 1, 2, 1), Some(4));
        assert_eq!(conv_output_size(7, 3, 1, 2, 1), Some(4));
        assert_eq!(conv_output_size(2, 3, 0, 1, 1), None);
    }

    #[test]
    fn same_padding_is_axis_specific() {
        assert_eq!(Conv2dOptions::same(1, 3, 1).padding, (0, 1));
        assert_eq!(Conv2dOptions::same(3, 1, 2).padding, (2, 0));
        assert_eq!(Conv2dOptions::same(3, 3, 4).padding, (4, 4));
    }

    #[test]
    fn channel_mismatch_reports_dimensions() {
        let err =
            ConvGeom::new(&[1, 2, 4, 4], &[3, 3, 3, 3], Conv2dOptions::default()).unwrap_err();
        assert!(err.to_string().contains("2 channels"));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![1, 1, 4, 5], |i| i as f64 * 0.3 - 1.0));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let k = tape.constant(Tensor::new(vec![1, 1, 3, 3], k).unwrap());
        let y = tape
            .conv2d(x, k, None, Conv2dOptions::same(3, 3, 1))
            .unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn dilation_wider_than_input_sees_only_centre() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64 + 1.0));
        let k = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let y = tape.conv2d(x, k, None, Conv2dOptions::same(3, 3, 4)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn pointwise_scales_input() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 1, 3, 3], |i| i as f32));
        let k = tape.constant(Tensor::full(vec![1, 1, 1, 1], 2.5));
        let y = tape.conv2d(x, k, None, Conv2dOptions::default()).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert_eq!(*a, 2.5 * b);
        }
    }
}
