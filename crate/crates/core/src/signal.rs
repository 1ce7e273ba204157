//! Complex-baseband jamming primitives, compound mixtures and AWGN.
//!
//! Every generator returns a [`ComplexSignal`] on a shared [`SampleClock`].
//! Randomness enters only through an explicit RNG argument, so a sample is
//! reproduced exactly by replaying its seed.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream used for every stochastic draw.
pub type RandomStream = ChaCha8Rng;

/// Largest carrier offset drawn for any primitive.
pub const MAX_OFFSET_HZ: f64 = 9.5e6;

/// Samples discarded from the start of the PBNJ filter output.
const PBNJ_WARMUP: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleClock {
    pub sample_rate_hz: f64,
    pub num_samples: usize,
}

impl SampleClock {
    pub fn new(sample_rate_hz: f64, num_samples: usize) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidSpec(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if num_samples < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 samples, got {num_samples}")));
        }
        Ok(Self { sample_rate_hz, num_samples })
    }

    /// 20 MHz over 1 ms.
    pub fn paper() -> Self {
        Self { sample_rate_hz: 20e6, num_samples: 20_000 }
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples as f64 / self.sample_rate_hz
    }

    fn check_offset(&self, freq_hz: f64) -> Result<()> {
        if freq_hz.abs() < self.sample_rate_hz / 2.0 {
            Ok(())
        } else {
            Err(Error::Aliasing { freq_hz, sample_rate_hz: self.sample_rate_hz })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    clock: SampleClock,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, clock: SampleClock) -> Result<Self> {
        if samples.len() != clock.num_samples {
            return Err(Error::InvalidSpec(format!(
                "{} samples for a clock of {}",
                samples.len(),
                clock.num_samples
            )));
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::NonFinite("signal sample".into()));
        }
        Ok(Self { samples, clock })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn clock(&self) -> SampleClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }
}

/// The five single-source jamming types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    Stj,
    Mtj,
    Lfm,
    Pulse,
    Pbnj,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Stj => "STJ",
            Primitive::Mtj => "MTJ",
            Primitive::Lfm => "LFM",
            Primitive::Pulse => "Pulse",
            Primitive::Pbnj => "PBNJ",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PrimitiveSpec {
    Stj { power: f64, carrier_offset_hz: f64, phase_rad: f64 },
    Mtj { power: f64, tones: Vec<(f64, f64)> },
    Lfm { power: f64, start_freq_hz: f64, sweep_bandwidth_hz: f64, sweep_period_s: f64 },
    Pulse { power: f64, carrier_offset_hz: f64, pri_samples: usize, pw_samples: usize },
    Pbnj { power: f64, center_offset_hz: f64, bandwidth_hz: f64, filter_order: usize },
}

impl PrimitiveSpec {
    pub fn kind(&self) -> Primitive {
        match self {
            PrimitiveSpec::Stj { .. } => Primitive::Stj,
            PrimitiveSpec::Mtj { .. } => Primitive::Mtj,
            PrimitiveSpec::Lfm { .. } => Primitive::Lfm,
            PrimitiveSpec::Pulse { .. } => Primitive::Pulse,
            PrimitiveSpec::Pbnj { .. } => Primitive::Pbnj,
        }
    }

    pub fn power(&self) -> f64 {
        match self {
            PrimitiveSpec::Stj { power, .. }
            | PrimitiveSpec::Mtj { power, .. }
            | PrimitiveSpec::Lfm { power, .. }
            | PrimitiveSpec::Pulse { power, .. }
            | PrimitiveSpec::Pbnj { power, .. } => *power,
        }
    }

    pub fn with_power(mut self, p: f64) -> Self {
        match &mut self {
            PrimitiveSpec::Stj { power, .. }
            | PrimitiveSpec::Mtj { power, .. }
            | PrimitiveSpec::Lfm { power, .. }
            | PrimitiveSpec::Pulse { power, .. }
            | PrimitiveSpec::Pbnj { power, .. } => *power = p,
        }
        self
    }
}

/// The nine compound classes, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompoundClass {
    StjLfm,
    StjPulse,
    StjPbnj,
    MtjLfm,
    MtjPulse,
    MtjPbnj,
    LfmPulse,
    LfmPbnj,
    PulsePbnj,
}

impl CompoundClass {
    pub const ALL: [CompoundClass; 9] = [
        CompoundClass::StjLfm,
        CompoundClass::StjPulse,
        CompoundClass::StjPbnj,
        CompoundClass::MtjLfm,
        CompoundClass::MtjPulse,
        CompoundClass::MtjPbnj,
        CompoundClass::LfmPulse,
        CompoundClass::LfmPbnj,
        CompoundClass::PulsePbnj,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    /// `(primary, secondary)` primitives.
    pub fn components(self) -> (Primitive, Primitive) {
        use Primitive::*;
        match self {
            CompoundClass::StjLfm => (Stj, Lfm),
            CompoundClass::StjPulse => (Stj, Pulse),
            CompoundClass::StjPbnj => (Stj, Pbnj),
            CompoundClass::MtjLfm => (Mtj, Lfm),
            CompoundClass::MtjPulse => (Mtj, Pulse),
            CompoundClass::MtjPbnj => (Mtj, Pbnj),
            CompoundClass::LfmPulse => (Lfm, Pulse),
            CompoundClass::LfmPbnj => (Lfm, Pbnj),
            CompoundClass::PulsePbnj => (Pulse, Pbnj),
        }
    }

    pub fn has_pulse(self) -> bool {
        let (a, b) = self.components();
        a == Primitive::Pulse || b == Primitive::Pulse
    }

    pub fn name(self) -> String {
        let (a, b) = self.components();
        format!("{a}+{b}")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for CompoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundSpec {
    pub primary: PrimitiveSpec,
    pub secondary: PrimitiveSpec,
    pub power_ratio_db: f64,
    pub class: CompoundClass,
}

impl CompoundSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.primary.kind(), self.secondary.kind()) != self.class.components() {
            return Err(Error::InvalidSpec(format!(
                "{} does not match components {}+{}",
                self.class,
                self.primary.kind(),
                self.secondary.kind()
            )));
        }
        if !self.power_ratio_db.is_finite() {
            return Err(Error::InvalidSpec("power ratio must be finite".into()));
        }
        Ok(())
    }
}

/// Noise level relative to the jamming power. `+inf` disables noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub jnr_db: f64,
}

impl NoiseSpec {
    pub fn disabled() -> Self {
        Self { jnr_db: f64::INFINITY }
    }
}

fn check_power(power: f64) -> Result<()> {
    if power.is_finite() && power >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("power {power} must be finite and non-negative")))
    }
}

fn tone(amp: f64, freq_hz: f64, phase: f64, clock: &SampleClock, n: usize) -> Complex64 {
    Complex64::from_polar(amp, 2.0 * PI * freq_hz * n as f64 / clock.sample_rate_hz + phase)
}

pub fn synth_stj(power: f64, carrier_offset_hz: f64, phase_rad: f64, clock: &SampleClock) -> Result<ComplexSignal> {
    check_power(power)?;
    clock.check_offset(carrier_offset_hz)?;
    let amp = power.sqrt();
    let samples = (0..clock.num_samples).map(|n| tone(amp, carrier_offset_hz, phase_rad, clock, n)).collect();
    ComplexSignal::new(samples, *clock)
}

pub fn synth_mtj(power: f64, tones: &[(f64, f64)], clock: &SampleClock) -> Result<ComplexSignal> {
    check_power(power)?;
    if tones.is_empty() {
        return Err(Error::InvalidSpec("MTJ needs at least one tone".into()));
    }
    for (i, (f, _)) in tones.iter().enumerate() {
        clock.check_offset(*f)?;
        if tones[..i].iter().any(|(g, _)| g == f) {
            return Err(Error::InvalidSpec(format!("duplicate MTJ tone at {f} Hz")));
        }
    }
    let amp = (power / tones.len() as f64).sqrt();
    let samples = (0..clock.num_samples)
        .map(|n| tones.iter().map(|&(f, ph)| tone(amp, f, ph, clock, n)).sum())
        .collect();
    ComplexSignal::new(samples, *clock)
}

/// Periodic sawtooth chirp; the sweep restarts every `sweep_period_s`.
pub fn synth_lfm(
    power: f64,
    start_freq_hz: f64,
    sweep_bandwidth_hz: f64,
    sweep_period_s: f64,
    clock: &SampleClock,
) -> Result<ComplexSignal> {
    check_power(power)?;
    if !(sweep_bandwidth_hz > 0.0 && sweep_period_s > 0.0) {
        return Err(Error::InvalidSpec("LFM bandwidth and period must be positive".into()));
    }
    let amp = power.sqrt();
    let k = sweep_bandwidth_hz / sweep_period_s;
    let samples = (0..clock.num_samples)
        .map(|n| {
            let t = (n as f64 / clock.sample_rate_hz) % sweep_period_s;
            Complex64::from_polar(amp, 2.0 * PI * (start_freq_hz * t + 0.5 * k * t * t))
        })
        .collect();
    ComplexSignal::new(samples, *clock)
}

/// Gated tone; `power` is the on-interval (peak) power.
pub fn synth_pulse(
    power: f64,
    carrier_offset_hz: f64,
    pri_samples: usize,
    pw_samples: usize,
    clock: &SampleClock,
) -> Result<ComplexSignal> {
    check_power(power)?;
    clock.check_offset(carrier_offset_hz)?;
    if pri_samples == 0 || pw_samples == 0 || pw_samples > pri_samples {
        return Err(Error::InvalidSpec(format!("pulse width {pw_samples} must be in 1..={pri_samples}")));
    }
    let amp = power.sqrt();
    let samples = (0..clock.num_samples)
        .map(|n| {
            if n % pri_samples < pw_samples {
                tone(amp, carrier_offset_hz, 0.0, clock, n)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    ComplexSignal::new(samples, *clock)
}

/// Second-order section in direct form I.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &mut [Complex64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = x0 * self.b[0] + x1 * self.b[1] + x2 * self.b[2] - y1 * self.a[0] - y2 * self.a[1];
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

/// Butterworth low-pass of the given order as cascaded sections (bilinear
/// transform with prewarping). Odd orders end with a first-order section.
fn butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Vec<Biquad> {
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let mut sections = Vec::new();
    for i in 0..order / 2 {
        let theta = (2 * i + 1) as f64 * PI / (2 * order) as f64;
        let q = 1.0 / (2.0 * theta.cos());
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Biquad { b: [b0, b0, 0.0], a: [(k - 1.0) / (k + 1.0), 0.0] });
    }
    sections
}

/// Complex white noise through a Butterworth low-pass at half the bandwidth,
/// shifted to `center_offset_hz` and scaled to `power`.
pub fn synth_pbnj<R: Rng + ?Sized>(
    power: f64,
    center_offset_hz: f64,
    bandwidth_hz: f64,
    filter_order: usize,
    clock: &SampleClock,
    rng: &mut R,
) -> Result<ComplexSignal> {
    check_power(power)?;
    clock.check_offset(center_offset_hz)?;
    if !(bandwidth_hz > 0.0 && bandwidth_hz < clock.sample_rate_hz) {
        return Err(Error::InvalidSpec(format!("PBNJ bandwidth {bandwidth_hz} must be in (0, Fs)")));
    }
    if filter_order == 0 {
        return Err(Error::InvalidSpec("PBNJ filter order must be positive".into()));
    }
    let n = clock.num_samples;
    let mut buf: Vec<Complex64> = (0..n + PBNJ_WARMUP)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    for section in butterworth_lowpass(filter_order, bandwidth_hz / 2.0, clock.sample_rate_hz) {
        section.run(&mut buf);
    }
    let mut samples: Vec<Complex64> = buf[PBNJ_WARMUP..]
        .iter()
        .enumerate()
        .map(|(i, v)| v * tone(1.0, center_offset_hz, 0.0, clock, i))
        .collect();
    let p = power_of(&samples);
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    let scale = (power / p).sqrt();
    samples.iter_mut().for_each(|v| *v *= scale);
    ComplexSignal::new(samples, *clock)
}

pub fn synthesize<R: Rng + ?Sized>(spec: &PrimitiveSpec, clock: &SampleClock, rng: &mut R) -> Result<ComplexSignal> {
    match spec {
        PrimitiveSpec::Stj { power, carrier_offset_hz, phase_rad } => {
            synth_stj(*power, *carrier_offset_hz, *phase_rad, clock)
        }
        PrimitiveSpec::Mtj { power, tones } => synth_mtj(*power, tones, clock),
        PrimitiveSpec::Lfm { power, start_freq_hz, sweep_bandwidth_hz, sweep_period_s } => {
            synth_lfm(*power, *start_freq_hz, *sweep_bandwidth_hz, *sweep_period_s, clock)
        }
        PrimitiveSpec::Pulse { power, carrier_offset_hz, pri_samples, pw_samples } => {
            synth_pulse(*power, *carrier_offset_hz, *pri_samples, *pw_samples, clock)
        }
        PrimitiveSpec::Pbnj { power, center_offset_hz, bandwidth_hz, filter_order } => {
            synth_pbnj(*power, *center_offset_hz, *bandwidth_hz, *filter_order, clock, rng)
        }
    }
}

fn power_of(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Mean of `|x[n]|^2`.
pub fn measure_power(signal: &ComplexSignal) -> f64 {
    power_of(signal.samples())
}

/// Amplitude ratio for a power ratio in dB.
pub fn amplitude_ratio(power_ratio_db: f64) -> f64 {
    10f64.powf(power_ratio_db / 20.0)
}

/// `(j1 + alpha j2) / gamma` with both components at unit power and gamma
/// measured from the realised sum, so the output power is exactly one.
pub fn mix_compound<R: Rng + ?Sized>(spec: &CompoundSpec, clock: &SampleClock, rng: &mut R) -> Result<ComplexSignal> {
    spec.validate()?;
    let j1 = synthesize(&spec.primary.clone().with_power(1.0), clock, rng)?;
    let j2 = synthesize(&spec.secondary.clone().with_power(1.0), clock, rng)?;
    let alpha = amplitude_ratio(spec.power_ratio_db);
    let mut mix: Vec<Complex64> = j1.samples().iter().zip(j2.samples()).map(|(a, b)| a + b * alpha).collect();
    let p = power_of(&mix);
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    let gamma = p.sqrt();
    mix.iter_mut().for_each(|v| *v /= gamma);
    ComplexSignal::new(mix, *clock)
}

/// Adds circular complex Gaussian noise of variance `P_J / 10^(JNR/10)`.
pub fn add_awgn<R: Rng + ?Sized>(signal: &ComplexSignal, noise: NoiseSpec, rng: &mut R) -> Result<ComplexSignal> {
    if noise.jnr_db.is_nan() {
        return Err(Error::InvalidSpec("JNR is NaN".into()));
    }
    let p = measure_power(signal);
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    if noise.jnr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let sigma = (p / 10f64.powf(noise.jnr_db / 10.0) / 2.0).sqrt();
    let samples = signal
        .samples()
        .iter()
        .map(|s| {
            let n: Complex64 = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            s + n * sigma
        })
        .collect();
    ComplexSignal::new(samples, signal.clock())
}

/// Unit-power primitive with parameters drawn uniformly from the dataset
/// ranges.
pub fn draw_primitive<R: Rng + ?Sized>(kind: Primitive, clock: &SampleClock, rng: &mut R) -> PrimitiveSpec {
    let fs = clock.sample_rate_hz;
    let max_off = MAX_OFFSET_HZ.min(0.475 * fs);
    match kind {
        Primitive::Stj => PrimitiveSpec::Stj {
            power: 1.0,
            carrier_offset_hz: rng.random_range(-max_off..=max_off),
            phase_rad: rng.random_range(0.0..2.0 * PI),
        },
        Primitive::Mtj => {
            let count = rng.random_range(3..=6usize);
            let spacing = rng.random_range(1.5e6..=3.0e6) * fs / 20e6;
            let span = spacing * (count - 1) as f64;
            let lo = rng.random_range(-max_off..=(max_off - span).max(-max_off));
            let tones = (0..count).map(|k| (lo + k as f64 * spacing, rng.random_range(0.0..2.0 * PI))).collect();
            PrimitiveSpec::Mtj { power: 1.0, tones }
        }
        Primitive::Lfm => {
            let bandwidth = 0.5 * fs;
            PrimitiveSpec::Lfm {
                power: 1.0,
                start_freq_hz: rng.random_range(-max_off..=(max_off - bandwidth).max(-max_off)),
                sweep_bandwidth_hz: bandwidth,
                sweep_period_s: clock.duration_s(),
            }
        }
        Primitive::Pulse => {
            let pri = (clock.num_samples / 6).max(1);
            let pw = ((0.3 * pri as f64).round() as usize).clamp(1, pri);
            PrimitiveSpec::Pulse {
                power: 1.0,
                carrier_offset_hz: rng.random_range(-max_off..=max_off),
                pri_samples: pri,
                pw_samples: pw,
            }
        }
        Primitive::Pbnj => {
            let bandwidth = rng.random_range(0.10..=0.25) * fs;
            let edge = max_off - bandwidth / 2.0;
            PrimitiveSpec::Pbnj {
                power: 1.0,
                center_offset_hz: rng.random_range(-edge..=edge),
                bandwidth_hz: bandwidth,
                filter_order: 6,
            }
        }
    }
}

/// Draws both components and the power ratio of one class.
pub fn draw_compound<R: Rng + ?Sized>(
    class: CompoundClass,
    pr_range_db: (f64, f64),
    clock: &SampleClock,
    rng: &mut R,
) -> CompoundSpec {
    let (a, b) = class.components();
    let primary = draw_primitive(a, clock, rng);
    let secondary = draw_primitive(b, clock, rng);
    let power_ratio_db =
        if pr_range_db.0 < pr_range_db.1 { rng.random_range(pr_range_db.0..=pr_range_db.1) } else { pr_range_db.0 };
    CompoundSpec { primary, secondary, power_ratio_db, class }
}

/// Noisy observation of one dataset sample, fully determined by `rng`.
pub fn synthesize_sample<R: Rng + ?Sized>(
    class: CompoundClass,
    jnr_db: f64,
    pr_range_db: (f64, f64),
    clock: &SampleClock,
    rng: &mut R,
) -> Result<(CompoundSpec, ComplexSignal)> {
    let spec = draw_compound(class, pr_range_db, clock, rng);
    let mix = mix_compound(&spec, clock, rng)?;
    let noisy = add_awgn(&mix, NoiseSpec { jnr_db }, rng)?;
    Ok((spec, noisy))
}

/// Finalizer of the splitmix64 generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-sample seed so any grid cell can be regenerated in isolation.
pub fn sample_seed(master_seed: u64, class: usize, jnr_index: usize, realization: usize) -> u64 {
    [class as u64, jnr_index as u64, realization as u64]
        .into_iter()
        .fold(splitmix64(master_seed), |h, v| splitmix64(h ^ splitmix64(v)))
}

pub fn rng_from_seed(seed: u64) -> RandomStream {
    use rand::SeedableRng;
    RandomStream::seed_from_u64(seed)
}
