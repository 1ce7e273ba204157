//! Layered run configuration: scale preset, then config file, then flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use skanet::dataset::GenerationConfig;
use skanet::metrics::{AcbCounting, LayerKind};
use skanet::model::ModelConfig;
use skanet::training::TrainConfig;
use skanet::Error;

/// Preset the config file and flags are layered on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 224 x 224 images, full-width network, 369,000-sample grid.
    #[default]
    Paper,
    /// 64 x 64 images, channels / 4, 1,350-sample grid, 20 epochs.
    Desk,
}

/// One layer for a hand-specified FLOPs report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    /// `h x w` is the output map.
    Conv { name: String, h: usize, w: usize, kh: usize, kw: usize, c_in: usize, c_out: usize },
    Linear { name: String, n_in: usize, n_out: usize },
}

impl LayerSpec {
    pub fn to_layer(&self) -> (String, LayerKind) {
        match self.clone() {
            LayerSpec::Conv { name, h, w, kh, kw, c_in, c_out } => (name, LayerKind::Conv { h, w, kh, kw, c_in, c_out }),
            LayerSpec::Linear { name, n_in, n_out } => (name, LayerKind::Linear { n_in, n_out }),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlopsConfig {
    pub counting: AcbCounting,
    /// When non-empty, these layers are reported instead of the model.
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generation: GenerationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub flops: FlopsConfig,
}

impl RunConfig {
    pub fn preset(scale: Scale) -> Self {
        let mut cfg = Self {
            generation: GenerationConfig::default(),
            model: ModelConfig::paper(),
            train: TrainConfig::default(),
            flops: FlopsConfig::default(),
        };
        if scale == Scale::Desk {
            let grid = &mut cfg.generation.grid;
            grid.jnr_min_db = -10.0;
            grid.jnr_max_db = 10.0;
            grid.jnr_step_db = 10.0;
            grid.realizations = 50;
            cfg.generation.features.side = 64;
            cfg.model = ModelConfig::desk();
            cfg.train.epochs = 20;
            cfg.train.monte_carlo_runs = 1;
        }
        cfg
    }

    /// Preset, overlaid with `file` if given, then with `seed`.
    pub fn load(scale: Scale, file: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut value = toml::Value::try_from(Self::preset(scale)).context("serializing preset")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
            let overlay: toml::Value = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
            merge(&mut value, overlay);
        }
        let mut cfg: Self =
            value.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(seed) = seed {
            cfg.generation.master_seed = seed;
            cfg.train.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.input_side != self.generation.features.side {
            return Err(Error::Config(format!(
                "model.input_side {} differs from generation.features.side {}",
                self.model.input_side, self.generation.features.side
            ))
            .into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self).map_err(|e| Error::Config(format!("cannot echo config: {e}")))?)
    }
}

/// Tables merge key by key; anything else in `overlay` replaces `base`.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
