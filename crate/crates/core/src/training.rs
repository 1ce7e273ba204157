//! Cross-entropy loss, Adam, the cosine schedule, stratified splitting and
//! the epoch loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skanet_tensor::{Mode, ParamStore, Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::metrics::{overall_accuracy, ConfusionMatrix};
use crate::model::Skanet;

/// Added to probabilities before the logarithm.
pub const LOG_EPSILON: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under `probs[B, K]`.
pub fn cross_entropy<T: Real>(tape: &Tape<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    Ok(tape.cross_entropy(probs, labels, LOG_EPSILON)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments for parameters of the given element counts.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_store<T: Real>(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let sizes: Vec<usize> = store.params().iter().map(|p| p.value.numel()).collect();
        Self::new(config, &sizes)
    }

    /// One bias-corrected update of `params` in place. `params[i]` and
    /// `grads[i]` must match the moment layout.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidSpec(format!(
                "adam state holds {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::InvalidSpec(format!("adam tensor {i} has mismatched length")));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `store` using its stored
/// gradients. Parameters without a gradient are rejected.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState, lr: f64) -> Result<()> {
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(store.params().len());
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(store.params().len());
    for p in store.params() {
        let g = p.grad.as_ref().ok_or_else(|| Error::InvalidSpec(format!("{} has no gradient", p.name)))?;
        values.push(p.value.data().iter().map(|x| x.as_f64()).collect());
        grads.push(g.data().iter().map(|x| x.as_f64()).collect());
    }
    let mut views: Vec<&mut [f64]> = values.iter_mut().map(|v| v.as_mut_slice()).collect();
    let gviews: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    state.step(&mut views, &gviews, lr)?;
    for (p, v) in store.params_mut().iter_mut().zip(values) {
        for (dst, src) in p.value.data_mut().iter_mut().zip(v) {
            *dst = T::lit(src);
        }
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min)(1 + cos(pi epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if epoch > total_epochs {
        return Err(Error::InvalidSpec(format!("epoch {epoch} beyond schedule of {total_epochs}")));
    }
    if total_epochs == 0 {
        return Ok(lr_max);
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Strata too small for a clean split.
    pub warnings: Vec<String>,
}

/// Strata below this size trigger a warning.
pub const MIN_STRATUM: usize = 10;

/// Stratified split of sample indices by `(class, JNR)`. Each stratum is
/// shuffled with its own seeded stream and sliced by `ratios`.
pub fn split_dataset(strata: &[(usize, f64)], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut groups: BTreeMap<(usize, i64), Vec<usize>> = BTreeMap::new();
    for (i, (class, jnr)) in strata.iter().enumerate() {
        // millidecibel key keeps float JNRs hashable
        groups.entry((*class, (jnr * 1000.0).round() as i64)).or_default().push(i);
    }
    let mut out = Split::default();
    for ((class, jnr), mut idx) in groups {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::signal::splitmix64(
            seed ^ crate::signal::splitmix64(((class as u64) << 32) ^ jnr as u64),
        ));
        idx.shuffle(&mut rng);
        let n = idx.len();
        if n < MIN_STRATUM {
            out.warnings.push(format!(
                "stratum class {class} JNR {} dB has {n} samples; using proportional rounding",
                jnr as f64 / 1000.0
            ));
        }
        let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub split: [f64; 3],
    pub master_seed: u64,
    pub monte_carlo_runs: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 0.0,
            split: [0.8, 0.1, 0.1],
            master_seed: 0,
            monte_carlo_runs: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0 && self.lr_max.is_finite()) {
            return Err(Error::Config("learning rates must satisfy 0 <= lr_min <= lr_max".into()));
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split must sum to 1".into()));
        }
        Ok(())
    }
}

/// Feature images and labels held in memory, row-major `[N, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub side: usize,
    pub tfi: Vec<T>,
    pub psd: Vec<T>,
    pub labels: Vec<usize>,
    pub jnr_db: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub tfi: Tensor<T>,
    pub psd: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(side: usize) -> Self {
        Self { side, tfi: Vec::new(), psd: Vec::new(), labels: Vec::new(), jnr_db: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, tfi: &[f32], psd: &[f32], label: usize, jnr_db: f64) -> Result<()> {
        let px = self.side * self.side;
        if tfi.len() != px || psd.len() != px {
            return Err(Error::InvalidSpec(format!("images must hold {px} pixels")));
        }
        self.tfi.extend(tfi.iter().map(|v| T::lit(*v as f64)));
        self.psd.extend(psd.iter().map(|v| T::lit(*v as f64)));
        self.labels.push(label);
        self.jnr_db.push(jnr_db);
        Ok(())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        let px = self.side * self.side;
        let mut tfi = Vec::with_capacity(indices.len() * px);
        let mut psd = Vec::with_capacity(indices.len() * px);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidSpec(format!("sample {i} outside dataset of {}", self.len())));
            }
            tfi.extend_from_slice(&self.tfi[i * px..(i + 1) * px]);
            psd.extend_from_slice(&self.psd[i * px..(i + 1) * px]);
            labels.push(self.labels[i]);
        }
        let shape = vec![indices.len(), 1, self.side, self.side];
        Ok(Batch { tfi: Tensor::new(shape.clone(), tfi)?, psd: Tensor::new(shape, psd)?, labels })
    }

    /// `(class, JNR)` keys for stratified splitting.
    pub fn strata(&self) -> Vec<(usize, f64)> {
        self.labels.iter().copied().zip(self.jnr_db.iter().copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub batches: usize,
}

/// Mini-batches of `batch_size` over a shuffled copy of `indices`. A
/// trailing remainder of one sample is dropped since batch norm cannot
/// normalize it.
pub fn minibatches(indices: &[usize], batch_size: usize, rng: &mut dyn RngCore) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let bs = batch_size.max(1);
    let mut batches: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
    if bs > 1 && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
    }
    batches
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One optimizer step on `batch`. Returns the loss and number correct.
pub fn train_step<T: Real>(
    model: &mut Skanet<T>,
    batch: &Batch<T>,
    adam: &mut AdamState,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, usize)> {
    let tape = Tape::new();
    let x = tape.constant(batch.tfi.clone());
    let p = tape.constant(batch.psd.clone());
    let (layout, mut f) = model.fwd(&tape, Mode::Train, true, rng);
    let probs = layout.forward_with(&mut f, x, p)?;
    let loss = cross_entropy(&tape, probs, &batch.labels)?;
    let loss_value = tape.value(loss).item().as_f64();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss_value}")));
    }
    tape.backward(loss)?;
    f.collect_grads();
    let correct = {
        let pv = tape.value(probs);
        let k = pv.shape()[1];
        pv.data().chunks(k).zip(&batch.labels).filter(|(row, y)| argmax(row) == **y).count()
    };
    adam_step(&mut model.store, adam, lr)?;
    Ok((loss_value, correct))
}

/// Shuffled pass over `indices` with one Adam step per mini-batch.
pub fn train_epoch<T: Real>(
    model: &mut Skanet<T>,
    data: &Dataset<T>,
    indices: &[usize],
    batch_size: usize,
    adam: &mut AdamState,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<EpochStats> {
    if indices.is_empty() {
        return Err(Error::InvalidSpec("cannot train on an empty dataset".into()));
    }
    let batches = minibatches(indices, batch_size, rng);
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
    for idx in &batches {
        let batch = data.batch(idx)?;
        let (loss, ok) = train_step(model, &batch, adam, lr, rng)?;
        loss_sum += loss * idx.len() as f64;
        correct += ok;
        seen += idx.len();
    }
    Ok(EpochStats { loss: loss_sum / seen as f64, accuracy: 100.0 * correct as f64 / seen as f64, batches: batches.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Overall accuracy in percent.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// `(true, predicted)` per evaluated index, in input order.
    pub predictions: Vec<(usize, usize)>,
}

/// Eval-mode loss, accuracy and confusion matrix over `indices`. Parameters
/// and running statistics are left untouched.
pub fn evaluate<T: Real>(
    model: &mut Skanet<T>,
    data: &Dataset<T>,
    indices: &[usize],
    batch_size: usize,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::InvalidSpec("cannot evaluate an empty dataset".into()));
    }
    let k = model.config().num_classes;
    let mut confusion = ConfusionMatrix::new(k);
    let mut predictions = Vec::with_capacity(indices.len());
    let mut loss_sum = 0.0;
    // Eval mode draws no random numbers
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for idx in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(idx)?;
        let probs = model.predict(&batch.tfi, &batch.psd, Mode::Eval, &mut rng)?;
        for (row, &y) in probs.data().chunks(k).zip(&batch.labels) {
            let pred = argmax(row);
            confusion.update(y, pred)?;
            predictions.push((y, pred));
            loss_sum -= (row[y].as_f64() + LOG_EPSILON).ln();
        }
    }
    let loss = loss_sum / indices.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss {loss}")));
    }
    Ok(Evaluation { loss, accuracy: overall_accuracy(&confusion)?, confusion, predictions })
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_oa: Option<f64>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,lr,train_loss,val_loss,val_oa";

    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!("{},{:.6e},{:.6},{},{}", self.epoch, self.lr, self.train_loss, opt(self.val_loss), opt(self.val_oa))
    }
}

/// Runs `cfg.epochs` epochs with a per-epoch cosine learning rate. Batch
/// order and dropout draw from `seed`.
pub fn fit<T: Real>(
    model: &mut Skanet<T>,
    data: &Dataset<T>,
    split: &Split,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut adam = AdamState::for_store(cfg.adam, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        let stats = train_epoch(model, data, &split.train, cfg.batch_size, &mut adam, lr, &mut rng)?;
        let val = if split.val.is_empty() { None } else { Some(evaluate(model, data, &split.val, cfg.batch_size)?) };
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: stats.loss,
            val_loss: val.as_ref().map(|v| v.loss),
            val_oa: val.as_ref().map(|v| v.accuracy),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
