//! Dual-domain features: log-magnitude STFT images and rendered Welch PSD
//! curves.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{CompoundClass, ComplexSignal};

/// Floor added before taking logarithms of power values.
pub const LOG_EPSILON: f64 = 1e-12;
/// Dynamic range kept below the maximum before normalisation.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rectangular,
}

impl WindowKind {
    pub fn weights(self, n: usize) -> Result<Vec<f64>> {
        match self {
            WindowKind::Hann => hann_window(n),
            WindowKind::Hamming => hamming_window(n),
            WindowKind::Rectangular if n >= 1 => Ok(vec![1.0; n]),
            WindowKind::Rectangular => Err(Error::InvalidSpec("window length must be positive".into())),
        }
    }
}

fn raised_cosine(n: usize, a0: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidSpec(format!("window length {n} must be at least 2")));
    }
    let d = (n - 1) as f64;
    Ok((0..n).map(|k| a0 - (1.0 - a0) * (2.0 * PI * k as f64 / d).cos()).collect())
}

/// Symmetric Hann window, `0.5 (1 - cos(2 pi k / (n - 1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    raised_cosine(n, 0.5)
}

/// Symmetric Hamming window, `0.54 - 0.46 cos(2 pi k / (n - 1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    raised_cosine(n, 0.54)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// Hann window with roughly 92% overlap and a 4096-point transform.
    pub fn with_window(window_len: usize) -> Self {
        let hop = ((0.08 * window_len as f64).round() as usize).max(1);
        Self { window_len, hop, fft_size: 4096, window: WindowKind::Hann }
    }

    /// Short window for classes containing pulses, long otherwise.
    pub fn for_class(class: CompoundClass) -> Self {
        Self::with_window(if class.has_pulse() { 64 } else { 128 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidSpec(format!(
                "STFT hop {} must be in 1..={}",
                self.hop, self.window_len
            )));
        }
        if self.fft_size < self.window_len || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidSpec(format!(
                "STFT size {} must be a power of two of at least {}",
                self.fft_size, self.window_len
            )));
        }
        Ok(())
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

/// Complex STFT coefficients, `frames x fft_size`, bins in transform order.
#[derive(Clone, Debug, PartialEq)]
pub struct Stft {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub hop: usize,
    pub sample_rate_hz: f64,
}

impl Stft {
    pub fn frame(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.bins..(m + 1) * self.bins]
    }
}

struct FramePlan {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    cfg: StftConfig,
    buf: Vec<Complex64>,
}

impl FramePlan {
    fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let window = cfg.window.weights(cfg.window_len)?;
        Ok(Self { fft, window, cfg, buf: vec![Complex64::default(); cfg.fft_size] })
    }

    /// Transforms frame `m` into the internal buffer.
    fn transform(&mut self, x: &[Complex64], m: usize) -> &[Complex64] {
        let start = m * self.cfg.hop;
        self.buf.fill(Complex64::default());
        for (n, w) in self.window.iter().enumerate() {
            self.buf[n] = x[start + n] * *w;
        }
        self.fft.process(&mut self.buf);
        &self.buf
    }
}

fn frames_or_err(cfg: &StftConfig, len: usize) -> Result<usize> {
    match cfg.frames(len) {
        0 => Err(Error::InvalidSpec(format!("signal of {len} samples is shorter than the {} sample window", cfg.window_len))),
        m => Ok(m),
    }
}

/// `X[m, k] = sum_n x[n + mH] w[n] exp(-i 2 pi k n / N_fft)`.
pub fn stft(signal: &ComplexSignal, cfg: &StftConfig) -> Result<Stft> {
    let mut plan = FramePlan::new(*cfg)?;
    let x = signal.samples();
    let frames = frames_or_err(cfg, x.len())?;
    let mut data = Vec::with_capacity(frames * cfg.fft_size);
    for m in 0..frames {
        data.extend_from_slice(plan.transform(x, m));
    }
    Ok(Stft { frames, bins: cfg.fft_size, data, hop: cfg.hop, sample_rate_hz: signal.clock().sample_rate_hz })
}

/// Bin frequencies in ascending order for an `n`-point transform.
pub fn shifted_freqs(n: usize, sample_rate_hz: f64) -> Vec<f64> {
    let half = n / 2;
    (0..n).map(|i| (i as f64 - half as f64) * sample_rate_hz / n as f64).collect()
}

/// Index into transform order of the `i`-th ascending-frequency bin.
fn unshift(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

/// Log-power time-frequency map, `frames x bins`, bins in ascending
/// frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values_db: Vec<f64>,
    pub frame_times_s: Vec<f64>,
    pub bin_freqs_hz: Vec<f64>,
}

/// `S[m, k] = 10 log10(|X[m, k]|^2 + eps)`, reordered to ascending frequency.
pub fn log_magnitude(x: &Stft, epsilon: f64) -> Result<Spectrogram> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidSpec(format!("epsilon {epsilon} must be positive")));
    }
    let n = x.bins;
    let mut values_db = Vec::with_capacity(x.frames * n);
    for m in 0..x.frames {
        let frame = x.frame(m);
        values_db.extend((0..n).map(|i| 10.0 * (frame[unshift(i, n)].norm_sqr() + epsilon).log10()));
    }
    Ok(Spectrogram {
        frames: x.frames,
        bins: n,
        values_db,
        frame_times_s: (0..x.frames).map(|m| (m * x.hop) as f64 / x.sample_rate_hz).collect(),
        bin_freqs_hz: shifted_freqs(n, x.sample_rate_hz),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap_fraction: f64,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { segment_len: 2048, overlap_fraction: 0.5, fft_size: 4096, window: WindowKind::Hamming }
    }
}

impl WelchConfig {
    pub fn stride(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }

    pub fn segments(&self, len: usize) -> usize {
        if len < self.segment_len {
            0
        } else {
            (len - self.segment_len) / self.stride() + 1
        }
    }
}

/// Two-sided density in W/Hz, ascending frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdEstimate {
    pub power_density: Vec<f64>,
    pub freqs_hz: Vec<f64>,
}

/// Averaged modified periodogram `|DFT(x_i w)|^2 / (M U Fs)`.
pub fn welch_psd(signal: &ComplexSignal, cfg: &WelchConfig) -> Result<PsdEstimate> {
    welch_with_window(signal, cfg, &cfg.window.weights(cfg.segment_len)?)
}

/// Welch estimate with explicit window weights.
pub fn welch_with_window(signal: &ComplexSignal, cfg: &WelchConfig, window: &[f64]) -> Result<PsdEstimate> {
    let m = cfg.segment_len;
    if !(0.0..1.0).contains(&cfg.overlap_fraction) {
        return Err(Error::InvalidSpec(format!("overlap {} must be in [0, 1)", cfg.overlap_fraction)));
    }
    if m == 0 || cfg.fft_size < m || window.len() != m {
        return Err(Error::InvalidSpec(format!("Welch segment {m} does not fit a {} point transform", cfg.fft_size)));
    }
    let x = signal.samples();
    let segments = cfg.segments(x.len());
    if segments == 0 {
        return Err(Error::InvalidSpec(format!("signal of {} samples holds no {m} sample segment", x.len())));
    }
    let fs = signal.clock().sample_rate_hz;
    let u = window.iter().map(|w| w * w).sum::<f64>() / m as f64;
    let n = cfg.fft_size;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::default(); n];
    let mut acc = vec![0.0; n];
    for s in 0..segments {
        let start = s * cfg.stride();
        buf.fill(Complex64::default());
        for (k, w) in window.iter().enumerate() {
            buf[k] = x[start + k] * *w;
        }
        fft.process(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
    }
    let scale = 1.0 / (m as f64 * u * fs * segments as f64);
    let power_density = (0..n).map(|i| acc[unshift(i, n)] * scale).collect();
    Ok(PsdEstimate { power_density, freqs_hz: shifted_freqs(n, fs) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageKind {
    Tfi,
    Psd,
}

/// Square single-channel image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub kind: ImageKind,
    pub side: usize,
    pub pixels: Vec<f32>,
}

impl FeatureImage {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.side + col]
    }
}

/// Clamps to `max - DYNAMIC_RANGE_DB` and maps to `[0, 1]`; a constant input
/// maps to 0.5.
pub fn normalize_db(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - DYNAMIC_RANGE_DB;
    let mut min = f64::INFINITY;
    for v in values.iter_mut() {
        *v = v.max(floor);
        min = min.min(*v);
    }
    let range = max - min;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - min) / range } else { 0.5 };
    }
}

fn bicubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per-output `(first input index, normalised weights)` of an antialiased
/// bicubic resampling from `input` to `output` samples.
fn resample_weights(input: usize, output: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = input as f64 / output as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(input);
            let mut w: Vec<f64> = (lo..hi).map(|j| bicubic((j as f64 + 0.5 - center) / stretch)).collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Resamples every contiguous row of length `input` to `output` samples.
fn resample_rows<T: Copy + Into<f64>>(src: &[T], input: usize, output: usize) -> Vec<f64> {
    let weights = resample_weights(input, output);
    let rows = src.len() / input;
    let mut out = Vec::with_capacity(rows * output);
    for r in 0..rows {
        let row = &src[r * input..(r + 1) * input];
        for (lo, w) in &weights {
            out.push(w.iter().zip(&row[*lo..]).map(|(w, v)| w * (*v).into()).sum());
        }
    }
    out
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Separable bicubic resize (`a = -0.5`) with the kernel widened by the
/// downsampling factor. `src` is row-major `h x w`.
pub fn resize_bicubic<T: Copy + Into<f64>>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "image buffer does not match its dimensions");
    let horiz = resample_rows(src, w, out_w);
    let vert = resample_rows(&transpose(&horiz, h, out_w), h, out_h);
    transpose(&vert, out_w, out_h)
}

/// Turns a normalised `frames x bins` map into an image with frequency on
/// the rows (highest at the top) and time on the columns.
fn tfi_from_normalized<T: Copy + Into<f64>>(values: &[T], frames: usize, bins: usize, side: usize) -> FeatureImage {
    // frequency axis first: it is by far the longest
    let by_freq = resample_rows(values, bins, side);
    let by_time = resample_rows(&transpose(&by_freq, frames, side), frames, side);
    let mut pixels = vec![0.0f32; side * side];
    for f in 0..side {
        let row = side - 1 - f;
        for t in 0..side {
            pixels[row * side + t] = by_time[f * side + t].clamp(0.0, 1.0) as f32;
        }
    }
    FeatureImage { kind: ImageKind::Tfi, side, pixels }
}

/// Normalises, then resizes a spectrogram to a `side x side` TFI.
pub fn spectrogram_to_image(spec: &Spectrogram, side: usize) -> Result<FeatureImage> {
    if spec.frames == 0 || spec.bins == 0 || side == 0 {
        return Err(Error::InvalidSpec("empty spectrogram or image".into()));
    }
    let mut values = spec.values_db.clone();
    normalize_db(&mut values);
    Ok(tfi_from_normalized(&values, spec.frames, spec.bins, side))
}

/// STFT, log power and image resize in one pass that never materialises the
/// complex coefficient matrix.
pub fn tfi_image(signal: &ComplexSignal, cfg: &StftConfig, side: usize) -> Result<FeatureImage> {
    if side == 0 {
        return Err(Error::InvalidSpec("image side must be positive".into()));
    }
    let mut plan = FramePlan::new(*cfg)?;
    let x = signal.samples();
    let frames = frames_or_err(cfg, x.len())?;
    let n = cfg.fft_size;
    let mut db = Vec::with_capacity(frames * n);
    for m in 0..frames {
        let frame = plan.transform(x, m);
        db.extend((0..n).map(|i| (10.0 * (frame[unshift(i, n)].norm_sqr() + LOG_EPSILON).log10()) as f32));
    }
    let max = db.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let floor = max - DYNAMIC_RANGE_DB;
    let min = db.iter().map(|v| (*v as f64).max(floor)).fold(f64::INFINITY, f64::min);
    let range = max - min;
    for v in db.iter_mut() {
        let c = (*v as f64).max(floor);
        *v = if range > 0.0 { ((c - min) / range) as f32 } else { 0.5 };
    }
    Ok(tfi_from_normalized(&db, frames, n, side))
}

/// Rasterises the dB PSD curve as a one-pixel polyline on a black
/// background; columns span frequency, rows span normalised level.
pub fn psd_to_image(psd: &PsdEstimate, side: usize) -> Result<FeatureImage> {
    let n = psd.power_density.len();
    if n == 0 || side == 0 {
        return Err(Error::InvalidSpec("empty PSD or image".into()));
    }
    let mut db: Vec<f64> = psd.power_density.iter().map(|p| 10.0 * (p + f64::MIN_POSITIVE).log10()).collect();
    normalize_db(&mut db);
    let level = |c: usize| -> f64 {
        let lo = c * n / side;
        let hi = ((c + 1) * n / side).max(lo + 1).min(n);
        db[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let rows: Vec<usize> = (0..side)
        .map(|c| side - 1 - ((level(c) * (side - 1) as f64).round() as usize).min(side - 1))
        .collect();
    let mut pixels = vec![0.0f32; side * side];
    for c in 0..side {
        // each column runs to the midpoint towards both neighbours, so
        // adjacent columns share a row and the curve stays connected
        let (mut lo, mut hi) = (rows[c], rows[c]);
        for n in [c.checked_sub(1), (c + 1 < side).then_some(c + 1)].into_iter().flatten() {
            let mid = (rows[c] + rows[n]) / 2;
            lo = lo.min(mid);
            hi = hi.max(mid);
        }
        for r in lo..=hi {
            pixels[r * side + c] = 1.0;
        }
    }
    Ok(FeatureImage { kind: ImageKind::Psd, side, pixels })
}

/// Full feature pair for one observation.
pub fn featurize(signal: &ComplexSignal, stft_cfg: &StftConfig, welch_cfg: &WelchConfig, side: usize) -> Result<(FeatureImage, FeatureImage)> {
    let tfi = tfi_image(signal, stft_cfg, side)?;
    let psd = psd_to_image(&welch_psd(signal, welch_cfg)?, side)?;
    Ok((tfi, psd))
}
