use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use skanet_tensor::{
    BatchNormOptions, Binder, BufferId, Conv2dOptions, Mode, ParamId, ParamStore, Real, RunningStats, Tape, Tensor, Var,
};

use crate::error::{Error, Result};

/// State threaded through one forward pass.
pub struct Fwd<'a, T: Real> {
    pub tape: &'a Tape<T>,
    pub store: &'a mut ParamStore<T>,
    pub binder: Binder,
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
}

impl<'a, T: Real> Fwd<'a, T> {
    pub fn new(tape: &'a Tape<T>, store: &'a mut ParamStore<T>, mode: Mode, trainable: bool, rng: &'a mut dyn RngCore) -> Self {
        let binder = if trainable { Binder::trainable() } else { Binder::frozen() };
        Self { tape, store, binder, mode, rng }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.binder.var(self.tape, self.store, id)
    }

    /// Copies gradients of the last backward pass into the store.
    pub fn collect_grads(self) {
        self.binder.collect_grads(self.tape, self.store);
    }
}

pub(crate) fn normal_tensor<T: Real>(shape: Vec<usize>, std: f64, rng: &mut dyn RngCore) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
}

pub(crate) fn uniform_tensor<T: Real>(shape: Vec<usize>, bound: f64, rng: &mut dyn RngCore) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    /// Number of Train-mode updates folded into the running statistics.
    pub tracked: BufferId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels]))?,
            tracked: store.add_buffer(format!("{name}.tracked"), Tensor::zeros(vec![1]))?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        if f.mode == Mode::Train {
            f.store.buffer_mut(self.tracked).value.data_mut()[0] += T::one();
        }
        let (mean, var) = f.store.buffer_pair_mut(self.running_mean, self.running_var);
        Ok(f.tape.batch_norm(x, g, b, RunningStats { mean, var }, f.mode, BatchNormOptions::default())?)
    }

    /// Eval-mode affine form `y = scale * x + shift`.
    pub fn fold<T: Real>(&self, store: &ParamStore<T>) -> Result<(Vec<f64>, Vec<f64>)> {
        if store.buffer(self.tracked).value.data()[0] == T::zero() {
            return Err(Error::InvalidSpec(format!(
                "{} has no populated running statistics",
                store.buffer(self.running_mean).name
            )));
        }
        let eps = BatchNormOptions::default().eps;
        let g = store.param(self.gamma).value.data();
        let b = store.param(self.beta).value.data();
        let m = store.buffer(self.running_mean).value.data();
        let v = store.buffer(self.running_var).value.data();
        let scale: Vec<f64> = g.iter().zip(v).map(|(g, v)| g.as_f64() / (v.as_f64() + eps).sqrt()).collect();
        let shift = b.iter().zip(m).zip(&scale).map(|((b, m), s)| b.as_f64() - s * m.as_f64()).collect();
        Ok((scale, shift))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOptions,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
}

impl Conv {
    /// He-normal kernel, "same" padding for the kernel shape and dilation.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: usize,
        dilation: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel.0 * kernel.1) as f64;
        let weight = store.add(
            format!("{name}.weight"),
            normal_tensor(vec![c_out, c_in, kernel.0, kernel.1], (2.0 / fan_in).sqrt(), rng),
        )?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![c_out]))?) } else { None };
        let opts = Conv2dOptions::same(kernel.0, kernel.1, dilation).with_stride(stride);
        Ok(Self { weight, bias, opts, c_in, c_out, kernel })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        Ok(f.tape.conv2d(x, w, b, self.opts)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform_tensor(vec![n_out, n_in], bound, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), uniform_tensor(vec![n_out], bound, rng))?) } else { None };
        Ok(Self { weight, bias, n_in, n_out })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        Ok(f.tape.linear(x, w, b)?)
    }
}

/// 3x3 convolution, batch norm and Swish; used for stems and downsampling.
#[derive(Clone, Copy, Debug)]
pub struct ConvBnSwish {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnSwish {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), c_in, c_out, (3, 3), stride, 1, false, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.tape.swish(y))
    }
}
