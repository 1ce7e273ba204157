//! SKANet: an SK-ACB spectrogram stream and a light ACB PSD stream, fused by
//! squeeze-and-excitation gating ahead of an MLP classifier.

mod acb;
mod layers;
mod net;
mod sk;

use serde::{Deserialize, Serialize};

pub use acb::{acb_fuse, Acb, AcbForm, FusedAcb};
pub use layers::{BatchNorm, Conv, ConvBnSwish, Fwd, Linear};
pub use net::{ClassifierHead, Layout, PsdStream, SeFusion, Skanet, Stage, StageBlock, StftStream};
pub use sk::{SkAcb, SkTrace};

use crate::error::{Error, Result};

/// Table V ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    NoSkAcb,
    NoPsdStream,
    NoSeFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSeFusion, Variant::NoPsdStream, Variant::NoSkAcb];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSkAcb => "no-sk-acb",
            Variant::NoPsdStream => "no-psd-stream",
            Variant::NoSeFusion => "no-se-fusion",
        }
    }
}

/// Complete topology description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_side: usize,
    pub stem_channels: usize,
    pub stft_channels: Vec<usize>,
    pub psd_stem_channels: usize,
    pub psd_channels: Vec<usize>,
    pub sk_dilations: Vec<usize>,
    pub sk_reduction: usize,
    pub sk_min_dim: usize,
    pub se_reduction: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub variant: Variant,
    /// ACBs hold a single folded kernel instead of three branches.
    pub fused: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-scale 224 x 224 configuration.
    pub fn paper() -> Self {
        Self {
            input_side: 224,
            stem_channels: 32,
            stft_channels: vec![64, 128, 256, 512],
            psd_stem_channels: 64,
            psd_channels: vec![64, 128],
            sk_dilations: vec![1, 2, 4],
            sk_reduction: 16,
            sk_min_dim: 16,
            se_reduction: 16,
            head_hidden: 256,
            num_classes: 9,
            dropout_p: 0.6,
            variant: Variant::Full,
            fused: false,
        }
    }

    /// 64 x 64 input with every channel count divided by four.
    pub fn desk() -> Self {
        Self::paper().scaled(4, 64)
    }

    /// Divides all stream channel counts by `divisor` and sets the input side.
    pub fn scaled(mut self, divisor: usize, side: usize) -> Self {
        let div = |c: usize| (c / divisor).max(1);
        self.input_side = side;
        self.stem_channels = div(self.stem_channels);
        self.psd_stem_channels = div(self.psd_stem_channels);
        self.stft_channels = self.stft_channels.iter().map(|c| div(*c)).collect();
        self.psd_channels = self.psd_channels.iter().map(|c| div(*c)).collect();
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn stft_dim(&self) -> usize {
        *self.stft_channels.last().unwrap_or(&self.stem_channels)
    }

    pub fn psd_dim(&self) -> usize {
        *self.psd_channels.last().unwrap_or(&self.psd_stem_channels)
    }

    pub fn has_psd(&self) -> bool {
        self.variant != Variant::NoPsdStream
    }

    pub fn has_se(&self) -> bool {
        matches!(self.variant, Variant::Full | Variant::NoSkAcb)
    }

    /// Width of the feature vector entering the classifier.
    pub fn fused_dim(&self) -> usize {
        self.stft_dim() + if self.has_psd() { self.psd_dim() } else { 0 }
    }

    /// SK bottleneck width `max(C / r, d_min)`.
    pub fn sk_dim(&self, channels: usize) -> usize {
        (channels / self.sk_reduction.max(1)).max(self.sk_min_dim)
    }

    pub fn se_dim(&self) -> usize {
        (self.fused_dim() / self.se_reduction.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.input_side < 2 {
            return bad("input_side must be at least 2");
        }
        if self.stft_channels.is_empty() || self.psd_channels.is_empty() {
            return bad("each stream needs at least one stage");
        }
        if self.stem_channels == 0
            || self.psd_stem_channels == 0
            || self.stft_channels.iter().chain(&self.psd_channels).any(|c| *c == 0)
        {
            return bad("channel counts must be positive");
        }
        if self.sk_dilations.is_empty() || self.sk_dilations.contains(&0) {
            return bad("sk_dilations must be non-empty and positive");
        }
        if self.head_hidden == 0 || self.num_classes < 2 {
            return bad("head_hidden must be positive and num_classes at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must be in [0, 1)");
        }
        Ok(())
    }
}
