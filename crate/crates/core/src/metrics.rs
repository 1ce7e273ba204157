//! Classification metrics and the FLOPs calculator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use skanet_tensor::conv_output_size;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// `counts[true][pred]` over `k` classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k], class_names: (0..k).map(|i| format!("class{i}")).collect() }
    }

    pub fn with_names(names: Vec<String>) -> Self {
        let k = names.len();
        Self { k, counts: vec![0; k * k], class_names: names }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::InvalidSpec(format!("{} counts for {k} classes", counts.len())));
        }
        Ok(Self { counts, ..Self::new(k) })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn update(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::InvalidSpec(format!("label pair ({truth}, {pred}) outside {} classes", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    /// Element-wise sum of two shards.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidSpec(format!("cannot merge {} and {} classes", self.k, other.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Delimited text with a header row of predicted classes.
    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.class_names.join(","));
        for i in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|j| self.get(i, j).to_string()).collect();
            let _ = writeln!(out, "{},{}", self.class_names[i], row.join(","));
        }
        out
    }
}

/// Records one prediction.
pub fn update_confusion(cm: &mut ConfusionMatrix, truth: usize, pred: usize) -> Result<()> {
    cm.update(truth, pred)
}

/// Percentage of samples on the diagonal.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::InvalidSpec("empty confusion matrix".into())),
        n => Ok(100.0 * cm.trace() as f64 / n as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Precision or recall had an empty denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall and F1. Empty denominators give 0 and set
/// the degeneracy flag.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted: u64 = (0..cm.k).map(|i| cm.get(i, c)).sum();
            let actual: u64 = (0..cm.k).map(|j| cm.get(c, j)).sum();
            let (precision, dp) = ratio(tp, predicted);
            let (recall, dr) = ratio(tp, actual);
            let f1 = if precision == 0.0 || recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics { precision, recall, f1, tp, fp: predicted - tp, fn_: actual - tp, degenerate: dp || dr }
        })
        .collect()
}

/// Per-class table as delimited text.
pub fn class_metrics_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("class,precision,recall,f1,tp,fp,fn,degenerate\n");
    for (name, m) in cm.class_names.iter().zip(precision_recall_f1(cm)) {
        let _ = writeln!(
            out,
            "{name},{:.6},{:.6},{:.6},{},{},{},{}",
            m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.degenerate
        );
    }
    out
}

/// `2 H W kh kw C_in C_out` with `H x W` the output map.
pub fn flops_conv_layer(h: usize, w: usize, kernel: (usize, usize), c_in: usize, c_out: usize) -> u64 {
    2 * (h * w * kernel.0 * kernel.1 * c_in * c_out) as u64
}

/// `(2 N_in - 1) N_out`.
pub fn flops_linear_layer(n_in: usize, n_out: usize) -> u64 {
    ((2 * n_in).saturating_sub(1) * n_out) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { h: usize, w: usize, kh: usize, kw: usize, c_in: usize, c_out: usize },
    Linear { n_in: usize, n_out: usize },
}

impl LayerKind {
    pub fn flops(&self) -> u64 {
        match *self {
            LayerKind::Conv { h, w, kh, kw, c_in, c_out } => flops_conv_layer(h, w, (kh, kw), c_in, c_out),
            LayerKind::Linear { n_in, n_out } => flops_linear_layer(n_in, n_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub rows: Vec<LayerRow>,
    pub conv_total: u64,
    pub linear_total: u64,
}

impl FlopsReport {
    pub fn from_layers(layers: Vec<(String, LayerKind)>) -> Self {
        let rows: Vec<LayerRow> = layers.into_iter().map(|(name, kind)| LayerRow { flops: kind.flops(), name, kind }).collect();
        let sum = |conv: bool| {
            rows.iter().filter(|r| matches!(r.kind, LayerKind::Conv { .. }) == conv).map(|r| r.flops).sum()
        };
        Self { conv_total: sum(true), linear_total: sum(false), rows }
    }

    pub fn total(&self) -> u64 {
        self.conv_total + self.linear_total
    }

    /// Aligned text table with totals.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:<6}  {:>16}\n", "layer", "kind", "flops");
        for r in &self.rows {
            let kind = if matches!(r.kind, LayerKind::Conv { .. }) { "conv" } else { "linear" };
            let _ = writeln!(out, "{:<width$}  {:<6}  {:>16}", r.name, kind, r.flops);
        }
        let _ = writeln!(out, "{:<width$}  {:<6}  {:>16}", "conv total", "", self.conv_total);
        let _ = writeln!(out, "{:<width$}  {:<6}  {:>16}", "linear total", "", self.linear_total);
        let _ = writeln!(out, "{:<width$}  {:<6}  {:>16}", "total", "", self.total());
        out
    }

    /// One `name,kind,flops` row per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,kind,h,w,kh,kw,c_in,c_out,n_in,n_out,flops\n");
        for r in &self.rows {
            let _ = match r.kind {
                LayerKind::Conv { h, w, kh, kw, c_in, c_out } => {
                    writeln!(out, "{},conv,{h},{w},{kh},{kw},{c_in},{c_out},,,{}", r.name, r.flops)
                }
                LayerKind::Linear { n_in, n_out } => writeln!(out, "{},linear,,,,,,,{n_in},{n_out},{}", r.name, r.flops),
            };
        }
        out
    }
}

/// How ACBs are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcbCounting {
    /// One 3x3 kernel per block.
    #[default]
    Fused,
    /// Three parallel kernels per block.
    Train,
}

struct Planner {
    layers: Vec<(String, LayerKind)>,
    counting: AcbCounting,
}

impl Planner {
    fn conv(&mut self, name: String, side: usize, k: (usize, usize), stride: usize, dil: usize, c_in: usize, c_out: usize) -> Result<usize> {
        let pad = (dil * (k.0 - 1) / 2, dil * (k.1 - 1) / 2);
        let h = conv_output_size(side, k.0, pad.0, stride, dil);
        let w = conv_output_size(side, k.1, pad.1, stride, dil);
        let (Some(h), Some(w)) = (h, w) else {
            return Err(Error::Config(format!("{name}: kernel does not fit a {side} pixel map")));
        };
        self.layers.push((name, LayerKind::Conv { h, w, kh: k.0, kw: k.1, c_in, c_out }));
        Ok(h)
    }

    fn linear(&mut self, name: String, n_in: usize, n_out: usize) {
        self.layers.push((name, LayerKind::Linear { n_in, n_out }));
    }

    fn acb(&mut self, name: &str, side: usize, dil: usize, c_in: usize, c_out: usize) -> Result<usize> {
        match self.counting {
            AcbCounting::Fused => self.conv(format!("{name}.fused"), side, (3, 3), 1, dil, c_in, c_out),
            AcbCounting::Train => {
                for (branch, k) in [("k3x3", (3, 3)), ("k1x3", (1, 3)), ("k3x1", (3, 1))] {
                    self.conv(format!("{name}.{branch}"), side, k, 1, dil, c_in, c_out)?;
                }
                Ok(side)
            }
        }
    }
}

/// Every convolution and linear layer of the configured network with its
/// output size, in forward order.
pub fn model_layers(cfg: &ModelConfig, input_side: usize, counting: AcbCounting) -> Result<Vec<(String, LayerKind)>> {
    cfg.validate()?;
    let mut p = Planner { layers: Vec::new(), counting };
    let mut side = p.conv("stft_stream.stem".into(), input_side, (3, 3), 2, 1, 1, cfg.stem_channels)?;
    let mut c_in = cfg.stem_channels;
    for (i, &c) in cfg.stft_channels.iter().enumerate() {
        let name = format!("stft_stream.stage{}", i + 1);
        if cfg.variant == Variant::NoSkAcb {
            p.acb(&format!("{name}.acb"), side, 1, c_in, c)?;
        } else {
            for (m, &d) in cfg.sk_dilations.iter().enumerate() {
                p.acb(&format!("{name}.sk.branch{m}"), side, d, c_in, c)?;
            }
            let d = cfg.sk_dim(c);
            p.linear(format!("{name}.sk.reduce"), c, d);
            for m in 0..cfg.sk_dilations.len() {
                p.linear(format!("{name}.sk.attention{m}"), d, c);
            }
        }
        side = p.conv(format!("{name}.down"), side, (3, 3), 2, 1, c, c)?;
        c_in = c;
    }
    if cfg.has_psd() {
        let mut side = p.conv("psd_stream.stem".into(), input_side, (3, 3), 2, 1, 1, cfg.psd_stem_channels)?;
        let mut c_in = cfg.psd_stem_channels;
        for (i, &c) in cfg.psd_channels.iter().enumerate() {
            let name = format!("psd_stream.stage{}", i + 1);
            p.acb(&format!("{name}.acb"), side, 1, c_in, c)?;
            side = p.conv(format!("{name}.down"), side, (3, 3), 2, 1, c, c)?;
            c_in = c;
        }
    }
    let dim = cfg.fused_dim();
    if cfg.has_se() {
        p.linear("se.fc1".into(), dim, cfg.se_dim());
        p.linear("se.fc2".into(), cfg.se_dim(), dim);
    }
    p.linear("head.fc1".into(), dim, cfg.head_hidden);
    p.linear("head.fc2".into(), cfg.head_hidden, cfg.num_classes);
    Ok(p.layers)
}

/// FLOPs of the configured network at `input_side`.
pub fn flops_model(cfg: &ModelConfig, input_side: usize, counting: AcbCounting) -> Result<FlopsReport> {
    Ok(FlopsReport::from_layers(model_layers(cfg, input_side, counting)?))
}
