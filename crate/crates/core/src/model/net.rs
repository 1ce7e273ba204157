use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skanet_tensor::{Mode, ParamStore, Real, Tape, Tensor, Var};

use super::acb::{acb_fuse, Acb, AcbForm};
use super::layers::{BatchNorm, ConvBnSwish, Fwd, Linear};
use super::sk::SkAcb;
use super::{ModelConfig, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum StageBlock {
    Sk(SkAcb),
    Plain(Acb),
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub block: StageBlock,
    pub down: ConvBnSwish,
}

/// Stem, SK-ACB stages with stride-2 downsampling, global pooling.
#[derive(Clone, Debug)]
pub struct StftStream {
    pub stem: ConvBnSwish,
    pub stages: Vec<Stage>,
}

impl StftStream {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let stem = ConvBnSwish::new(store, "stft_stream.stem", 1, cfg.stem_channels, 2, rng)?;
        let mut c_in = cfg.stem_channels;
        let mut stages = Vec::new();
        for (i, &c) in cfg.stft_channels.iter().enumerate() {
            let name = format!("stft_stream.stage{}", i + 1);
            let block = if cfg.variant == Variant::NoSkAcb {
                StageBlock::Plain(Acb::new(store, &format!("{name}.acb"), c_in, c, 1, 1, cfg.fused, rng)?)
            } else {
                StageBlock::Sk(SkAcb::new(store, &format!("{name}.sk"), c_in, c, &cfg.sk_dilations, cfg.sk_dim(c), cfg.fused, rng)?)
            };
            let down = ConvBnSwish::new(store, &format!("{name}.down"), c, c, 2, rng)?;
            stages.push(Stage { block, down });
            c_in = c;
        }
        Ok(Self { stem, stages })
    }

    /// `[B, 1, S, S]` image to `[B, C_last]` features.
    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.stem.forward(f, x)?;
        for stage in &self.stages {
            y = match &stage.block {
                StageBlock::Sk(sk) => sk.forward(f, y)?,
                StageBlock::Plain(acb) => acb.forward(f, y)?,
            };
            y = stage.down.forward(f, y)?;
        }
        Ok(f.tape.global_avg_pool(y)?)
    }

    fn acbs(&self) -> Vec<&Acb> {
        self.stages
            .iter()
            .flat_map(|s| match &s.block {
                StageBlock::Sk(sk) => sk.branches.iter().collect::<Vec<_>>(),
                StageBlock::Plain(acb) => vec![acb],
            })
            .collect()
    }
}

/// Shallow plain-ACB stream for the PSD image.
#[derive(Clone, Debug)]
pub struct PsdStream {
    pub stem: ConvBnSwish,
    pub stages: Vec<(Acb, ConvBnSwish)>,
}

impl PsdStream {
    fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let stem = ConvBnSwish::new(store, "psd_stream.stem", 1, cfg.psd_stem_channels, 2, rng)?;
        let mut c_in = cfg.psd_stem_channels;
        let mut stages = Vec::new();
        for (i, &c) in cfg.psd_channels.iter().enumerate() {
            let name = format!("psd_stream.stage{}", i + 1);
            let acb = Acb::new(store, &format!("{name}.acb"), c_in, c, 1, 1, cfg.fused, rng)?;
            let down = ConvBnSwish::new(store, &format!("{name}.down"), c, c, 2, rng)?;
            stages.push((acb, down));
            c_in = c;
        }
        Ok(Self { stem, stages })
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.stem.forward(f, x)?;
        for (acb, down) in &self.stages {
            y = acb.forward(f, y)?;
            y = down.forward(f, y)?;
        }
        Ok(f.tape.global_avg_pool(y)?)
    }
}

/// Squeeze-and-excitation gate over the concatenated stream features.
#[derive(Clone, Copy, Debug)]
pub struct SeFusion {
    pub w1: Linear,
    pub w2: Linear,
}

impl SeFusion {
    /// `w = sigmoid(W2 relu(W1 F)); F_final = w * F`.
    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, cat: Var) -> Result<Var> {
        let w = self.gate(f, cat)?;
        Ok(f.tape.mul(w, cat)?)
    }

    pub fn gate<T: Real>(&self, f: &mut Fwd<'_, T>, cat: Var) -> Result<Var> {
        let h = self.w1.forward(f, cat)?;
        let h = f.tape.relu(h);
        let h = self.w2.forward(f, h)?;
        Ok(f.tape.sigmoid(h))
    }
}

/// Linear, batch norm, Swish, dropout, linear, softmax.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
    pub dropout_p: f64,
}

impl ClassifierHead {
    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.fc1.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        let y = f.tape.swish(y);
        let y = f.tape.dropout(y, self.dropout_p, f.mode, &mut *f.rng)?;
        let y = self.fc2.forward(f, y)?;
        Ok(f.tape.softmax(y, 1)?)
    }
}

/// Structure of a model: which layers exist and which store entries they
/// read. Holds no parameter values.
#[derive(Clone, Debug)]
pub struct Layout {
    pub config: ModelConfig,
    pub stft: StftStream,
    pub psd: Option<PsdStream>,
    pub se: Option<SeFusion>,
    pub head: ClassifierHead,
}

impl Layout {
    /// Class probabilities `[B, K]` recorded on `f.tape`.
    pub fn forward_with<T: Real>(&self, f: &mut Fwd<'_, T>, tfi: Var, psd: Var) -> Result<Var> {
        let feat = self.features(f, tfi, psd)?;
        self.head.forward(f, feat)
    }

    /// Feature vector entering the classifier head.
    pub fn features<T: Real>(&self, f: &mut Fwd<'_, T>, tfi: Var, psd: Var) -> Result<Var> {
        let s = self.config.input_side;
        let tfi_shape = f.tape.shape(tfi);
        let psd_shape = f.tape.shape(psd);
        for (what, shape) in [("TFI", &tfi_shape), ("PSD", &psd_shape)] {
            if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s {
                return Err(Error::InvalidSpec(format!("{what} input {shape:?} must be [B, 1, {s}, {s}]")));
            }
        }
        if tfi_shape[0] != psd_shape[0] {
            return Err(Error::InvalidSpec(format!("batch mismatch: TFI {}, PSD {}", tfi_shape[0], psd_shape[0])));
        }
        let fs = self.stft.forward(f, tfi)?;
        let Some(psd_stream) = &self.psd else { return Ok(fs) };
        let fp = psd_stream.forward(f, psd)?;
        let cat = f.tape.concat(&[fs, fp], 1)?;
        match &self.se {
            Some(se) => se.forward(f, cat),
            None => Ok(cat),
        }
    }

    /// Every ACB in forward order.
    pub fn acbs(&self) -> Vec<&Acb> {
        let mut out = self.stft.acbs();
        if let Some(p) = &self.psd {
            out.extend(p.stages.iter().map(|(a, _)| a));
        }
        out
    }
}

/// Model layout plus its parameters.
#[derive(Clone, Debug)]
pub struct Skanet<T> {
    pub layout: Layout,
    pub store: ParamStore<T>,
}

impl<T: Real> Skanet<T> {
    /// Builds the configured variant with seeded initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng: &mut dyn RngCore = &mut rng;
        let mut store = ParamStore::new();
        let stft = StftStream::new(&mut store, &config, rng)?;
        let psd = if config.has_psd() { Some(PsdStream::new(&mut store, &config, rng)?) } else { None };
        let dim = config.fused_dim();
        let se = if config.has_se() {
            Some(SeFusion {
                w1: Linear::new(&mut store, "se.fc1", dim, config.se_dim(), true, rng)?,
                w2: Linear::new(&mut store, "se.fc2", config.se_dim(), dim, true, rng)?,
            })
        } else {
            None
        };
        let head = ClassifierHead {
            fc1: Linear::new(&mut store, "head.fc1", dim, config.head_hidden, true, rng)?,
            bn: BatchNorm::new(&mut store, "head.bn", config.head_hidden)?,
            fc2: Linear::new(&mut store, "head.fc2", config.head_hidden, config.num_classes, true, rng)?,
            dropout_p: config.dropout_p,
        };
        Ok(Self { layout: Layout { config, stft, psd, se, head }, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    /// Total trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Trainable scalars whose names start with `prefix`.
    pub fn params_under(&self, prefix: &str) -> usize {
        self.store.num_scalars_with_prefix(prefix)
    }

    /// Forward context over this model's parameters.
    pub fn fwd<'a>(&'a mut self, tape: &'a Tape<T>, mode: Mode, trainable: bool, rng: &'a mut dyn RngCore) -> (&'a Layout, Fwd<'a, T>) {
        (&self.layout, Fwd::new(tape, &mut self.store, mode, trainable, rng))
    }

    /// Probabilities for a batch, computed on a fresh tape without gradients.
    pub fn predict(&mut self, tfi: &Tensor<T>, psd: &Tensor<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let (x, p) = (tape.constant(tfi.clone()), tape.constant(psd.clone()));
        let (layout, mut f) = self.fwd(&tape, mode, false, rng);
        let probs = layout.forward_with(&mut f, x, p)?;
        let out = tape.value(probs).clone();
        Ok(out)
    }

    /// Inference-form copy with every ACB folded into one biased 3x3 kernel.
    pub fn fuse(&self) -> Result<Self> {
        if self.config().fused {
            return Err(Error::InvalidSpec("model is already fused".into()));
        }
        let mut config = self.config().clone();
        config.fused = true;
        let mut fused = Self::new(config, 0)?;
        for p in fused.store.params_mut() {
            if let Some(id) = self.store.param_id(&p.name) {
                p.value = self.store.param(id).value.clone();
            }
        }
        for b in fused.store.buffers_mut() {
            if let Some(id) = self.store.buffer_id(&b.name) {
                b.value = self.store.buffer(id).value.clone();
            }
        }
        let pairs: Vec<(Acb, Acb)> =
            self.layout.acbs().into_iter().copied().zip(fused.layout.acbs().into_iter().copied()).collect();
        for (src, dst) in pairs {
            let folded = acb_fuse(&self.store, &src)?;
            let AcbForm::Fused { conv } = dst.form else { unreachable!("fused config builds fused blocks") };
            fused.store.param_mut(conv.weight).value = folded.kernel;
            fused.store.param_mut(conv.bias.expect("fused conv has bias")).value = folded.bias;
        }
        Ok(fused)
    }

    pub fn cast<U: Real>(&self) -> Skanet<U> {
        Skanet { layout: self.layout.clone(), store: self.store.cast() }
    }
}
