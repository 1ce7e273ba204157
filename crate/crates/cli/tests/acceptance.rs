//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `SKANET_ACCEPT=1,2,9` restricts the run.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{naive_conv, randomize, uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skanet::metrics::*;
use skanet::model::*;
use skanet::signal::*;
use skanet::spectral::*;
use skanet_cli::commands::{cmd_ablate, cmd_synth, cmd_train, CHECKPOINT_FILE};
use skanet_cli::config::{RunConfig, Scale};
use skanet_tensor::gradcheck::{check_gradients, relative_error};
use skanet_tensor::{BatchNormOptions, Conv2dOptions, Mode, ParamStore, Real, RunningStats, Tape, Tensor, Var};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(elapsed: Duration, limit_s: u64) -> Outcome {
    if elapsed.as_secs() < limit_s {
        Ok(format!("{:.1} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

// 1. kernel fusion

fn acb_deviation<T: Real>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (stride, dilation) = [(1, 1), (1, 2), (2, 1), (1, 4), (2, 2)][seed as usize % 5];
    let (c_in, c_out) = (r.random_range(1..5), r.random_range(1..6));
    let (h, w) = (r.random_range(3..12), r.random_range(3..12));
    let mut store = ParamStore::<T>::new();
    let acb = Acb::new(&mut store, "acb", c_in, c_out, stride, dilation, false, &mut r).unwrap();
    randomize(&mut store, &mut r);
    let fused = acb_fuse(&store, &acb).unwrap();
    let x: Tensor<T> = uniform(&mut r, &[2, c_in, h, w], -1.0, 1.0);

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut dropout_rng = rng(0);
    let mut f = Fwd::new(&tape, &mut store, Mode::Eval, false, &mut dropout_rng);
    let a = acb.forward_pre(&mut f, xv).unwrap();
    let k = tape.constant(fused.kernel.clone());
    let b = tape.constant(fused.bias.clone());
    let opts = Conv2dOptions::same(3, 3, acb.dilation).with_stride(acb.stride);
    let y = tape.conv2d(xv, k, Some(b), opts).unwrap();
    let (a, y) = (tape.value(a).clone(), tape.value(y).clone());
    drop(f);
    a.max_abs_diff(&y).as_f64()
}

fn fusion() -> Outcome {
    let t = Instant::now();
    let (mut w32, mut w64) = (0.0f64, 0.0f64);
    for seed in 0..1000 {
        w32 = w32.max(acb_deviation::<f32>(seed));
        w64 = w64.max(acb_deviation::<f64>(seed));
    }
    ensure!(w32 < 1e-4, "32-bit deviation {w32:.3e}");
    ensure!(w64 < 1e-10, "64-bit deviation {w64:.3e}");
    Ok(format!("1000 pairs, max deviation {w32:.2e} (32-bit), {w64:.2e} (64-bit), {}", within(t.elapsed(), 60)?))
}

// 2. gradients

const H: f64 = 1e-5;

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

/// Magnitudes in [0.2, 4] so activation kinks are not straddled.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(0.2..4.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn project(t: &Tape<f64>, y: Var, seed: u64) -> skanet_tensor::Result<Var> {
    let w = t.constant(random(&mut rng(seed), &t.shape(y)));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn op_check(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&Tape<f64>, &[Var]) -> skanet_tensor::Result<Var>,
    worst: &mut f64,
    checked: &mut usize,
) -> Result<(), String> {
    let report = check_gradients(inputs, H, f).map_err(|e| format!("{name}: {e}"))?;
    ensure!(report.max_rel_error < 1e-3, "{name}: relative error {:.3e} at {:?}", report.max_rel_error, report.worst);
    *worst = worst.max(report.max_rel_error);
    *checked += report.checked;
    Ok(())
}

fn op_gradients() -> Result<(usize, f64), String> {
    let mut r = rng(1);
    let (mut worst, mut n) = (0.0, 0);
    for (i, &(ci, co, h, w, kh, kw, stride, pad, dil)) in [
        (2, 3, 5, 6, 3, 3, 1, (1, 1), 1),
        (2, 2, 7, 7, 3, 3, 2, (1, 1), 1),
        (1, 2, 6, 6, 3, 3, 1, (2, 2), 2),
        (2, 2, 5, 5, 1, 3, 1, (0, 1), 1),
        (2, 2, 5, 5, 3, 1, 1, (1, 0), 1),
        (2, 1, 9, 9, 3, 3, 1, (4, 4), 4),
        (1, 1, 2, 2, 3, 3, 1, (4, 4), 4),
    ]
    .iter()
    .enumerate()
    {
        let inputs = [random(&mut r, &[2, ci, h, w]), random(&mut r, &[co, ci, kh, kw]), random(&mut r, &[co])];
        let opts = Conv2dOptions { stride, padding: pad, dilation: dil };
        op_check(&format!("conv2d {i}"), &inputs, |t, v| project(t, t.conv2d(v[0], v[1], Some(v[2]), opts)?, 10 + i as u64), &mut worst, &mut n)?;
    }
    for mode in [Mode::Train, Mode::Eval] {
        let inputs = [random(&mut r, &[3, 2, 3, 3]), random(&mut r, &[2]), random(&mut r, &[2])];
        op_check(
            &format!("batch_norm {mode:?}"),
            &inputs,
            |t, v| {
                let (mut mean, mut var) = (vec![0.1, -0.2], vec![0.8, 1.3]);
                let stats = RunningStats { mean: &mut mean, var: &mut var };
                project(t, t.batch_norm(v[0], v[1], v[2], stats, mode, BatchNormOptions::default())?, 3)
            },
            &mut worst,
            &mut n,
        )?;
    }
    let x = off_zero(&mut r, &[2, 3, 4]);
    op_check("swish", std::slice::from_ref(&x), |t, v| project(t, t.swish(v[0]), 5), &mut worst, &mut n)?;
    op_check("sigmoid", std::slice::from_ref(&x), |t, v| project(t, t.sigmoid(v[0]), 6), &mut worst, &mut n)?;
    op_check("relu", std::slice::from_ref(&x), |t, v| project(t, t.relu(v[0]), 7), &mut worst, &mut n)?;
    let x = random(&mut r, &[2, 3, 4]);
    for axis in 0..3 {
        op_check("softmax", std::slice::from_ref(&x), |t, v| project(t, t.softmax(v[0], axis)?, 20 + axis as u64), &mut worst, &mut n)?;
    }
    op_check("global_avg_pool", &[random(&mut r, &[2, 3, 4, 5])], |t, v| project(t, t.global_avg_pool(v[0])?, 8), &mut worst, &mut n)?;
    let inputs = [random(&mut r, &[3, 4]), random(&mut r, &[5, 4]), random(&mut r, &[5])];
    op_check("linear", &inputs, |t, v| project(t, t.linear(v[0], v[1], Some(v[2]))?, 9), &mut worst, &mut n)?;
    let (a, b, c) = (random(&mut r, &[2, 3, 2]), random(&mut r, &[2, 1, 2]), random(&mut r, &[2, 3, 2]));
    op_check("concat", &[a.clone(), b], |t, v| project(t, t.concat(&[v[0], v[1]], 1)?, 11), &mut worst, &mut n)?;
    op_check("narrow", std::slice::from_ref(&a), |t, v| project(t, t.narrow(v[0], 1, 1, 2)?, 12), &mut worst, &mut n)?;
    op_check("reshape", std::slice::from_ref(&a), |t, v| project(t, t.reshape(v[0], &[3, 4])?, 13), &mut worst, &mut n)?;
    op_check("add", &[a.clone(), c.clone()], |t, v| project(t, t.add(v[0], v[1])?, 14), &mut worst, &mut n)?;
    op_check("mul", &[a.clone(), c], |t, v| project(t, t.mul(v[0], v[1])?, 15), &mut worst, &mut n)?;
    let s = random(&mut r, &[2, 3]);
    op_check("scale_channels", &[a.clone(), s], |t, v| project(t, t.scale_channels(v[0], v[1])?, 16), &mut worst, &mut n)?;
    op_check("mean", std::slice::from_ref(&a), |t, v| Ok(t.mean(v[0])), &mut worst, &mut n)?;
    op_check("sum", &[a], |t, v| Ok(t.sum(v[0])), &mut worst, &mut n)?;
    op_check(
        "dropout",
        &[random(&mut r, &[4, 6])],
        |t, v| project(t, t.dropout(v[0], 0.5, Mode::Train, &mut rng(99))?, 17),
        &mut worst,
        &mut n,
    )?;
    op_check(
        "cross_entropy",
        &[random(&mut r, &[4, 9])],
        |t, v| {
            let p = t.softmax(v[0], 1)?;
            t.cross_entropy(p, &[0, 3, 8, 3], 1e-12)
        },
        &mut worst,
        &mut n,
    )?;
    Ok((n, worst))
}

fn model_gradients() -> Result<(usize, usize, f64), String> {
    let cfg = ModelConfig::paper().scaled(16, 16);
    let mut model = Skanet::<f64>::new(cfg, 8).map_err(|e| e.to_string())?;
    let mut r = rng(29);
    let tfi: Tensor<f64> = uniform(&mut r, &[3, 1, 16, 16], 0.0, 1.0);
    let psd: Tensor<f64> = uniform(&mut r, &[3, 1, 16, 16], 0.0, 1.0);
    let labels = [1usize, 4, 7];
    let loss = |model: &mut Skanet<f64>, trainable: bool| -> f64 {
        let tape = Tape::new();
        let (x, p) = (tape.constant(tfi.clone()), tape.constant(psd.clone()));
        // the same dropout mask on every evaluation
        let mut mask = rng(99);
        let (layout, mut f) = model.fwd(&tape, Mode::Train, trainable, &mut mask);
        let probs = layout.forward_with(&mut f, x, p).unwrap();
        let l = skanet::training::cross_entropy(&tape, probs, &labels).unwrap();
        let v = tape.value(l).item();
        if trainable {
            tape.backward(l).unwrap();
            f.collect_grads();
        }
        v
    };
    loss(&mut model, true);
    let grads: Vec<Tensor<f64>> = model.store.params().iter().map(|p| p.grad.clone().unwrap()).collect();
    let (mut worst, mut checked, mut failures) = (0.0f64, 0usize, 0usize);
    let mut first_failure = None;
    for (i, g) in grads.iter().enumerate() {
        for e in 0..g.numel() {
            let orig = model.store.params()[i].value.data()[e];
            model.store.params_mut()[i].value.data_mut()[e] = orig + H;
            let plus = loss(&mut model, false);
            model.store.params_mut()[i].value.data_mut()[e] = orig - H;
            let minus = loss(&mut model, false);
            model.store.params_mut()[i].value.data_mut()[e] = orig;
            let err = relative_error(g.data()[e], (plus - minus) / (2.0 * H));
            if err.is_nan() || err >= 1e-3 {
                failures += 1;
                first_failure.get_or_insert_with(|| format!("{}[{e}] relative error {err:.3e}", model.store.params()[i].name));
            }
            worst = worst.max(err);
            checked += 1;
        }
    }
    ensure!(failures == 0, "{failures} of {checked} scalars fail, first {}", first_failure.unwrap_or_default());
    Ok((checked, model.count_params(), worst))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let (ops, op_worst) = op_gradients()?;
    let (checked, params, worst) = model_gradients()?;
    ensure!(checked == params, "checked {checked} of {params} parameters");
    Ok(format!(
        "{ops} op entries (max rel {op_worst:.1e}), all {checked} network scalars (max rel {worst:.1e}), {}",
        within(t.elapsed(), 600)?
    ))
}

// 3. signal calibration

fn calibration() -> Outcome {
    let t = Instant::now();
    let clock = SampleClock::paper();
    ensure!(clock.num_samples == 20_000, "record length {}", clock.num_samples);
    let mut draw = rng(3);
    let (mut worst_p, mut worst_j) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let class = CompoundClass::ALL[draw.random_range(0..9)];
        let jnr = draw.random_range(-25.0..=15.0);
        let mut r = rng(draw.next_u64());
        let spec = draw_compound(class, (-3.0, 3.0), &clock, &mut r);
        let mix = mix_compound(&spec, &clock, &mut r).map_err(|e| e.to_string())?;
        let p = measure_power(&mix);
        let noisy = add_awgn(&mix, NoiseSpec { jnr_db: jnr }, &mut r).map_err(|e| e.to_string())?;
        let noise: f64 = noisy.samples().iter().zip(mix.samples()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
            / clock.num_samples as f64;
        let measured = 10.0 * (p / noise).log10();
        worst_p = worst_p.max((p - 1.0).abs());
        worst_j = worst_j.max((measured - jnr).abs());
    }
    ensure!(worst_p < 1e-10, "mixture power off by {worst_p:.3e}");
    ensure!(worst_j <= 0.2, "JNR off by {worst_j:.3} dB");
    Ok(format!("100 draws, power error {worst_p:.1e}, JNR error {worst_j:.3} dB, {}", within(t.elapsed(), 60)?))
}

// 4. spectral oracles

fn unit_noise(n: usize, seed: u64) -> ComplexSignal {
    let mut r = rng(seed);
    let std = 0.5f64.sqrt();
    let samples = (0..n)
        .map(|_| {
            num_complex::Complex64::new(
                r.sample::<f64, _>(rand_distr::StandardNormal) * std,
                r.sample::<f64, _>(rand_distr::StandardNormal) * std,
            )
        })
        .collect();
    ComplexSignal::new(samples, SampleClock::new(20e6, n).unwrap()).unwrap()
}

fn spectral() -> Outcome {
    use num_complex::Complex64;
    use std::f64::consts::PI;
    let t = Instant::now();
    let x = unit_noise(400, 1);
    let mut worst_stft = 0.0f64;
    for (window_len, hop, fft_size, window) in [(32, 7, 64, WindowKind::Hann), (64, 16, 64, WindowKind::Hann), (20, 20, 32, WindowKind::Hamming)] {
        let out = stft(&x, &StftConfig { window_len, hop, fft_size, window }).map_err(|e| e.to_string())?;
        let w = window.weights(window_len).map_err(|e| e.to_string())?;
        for m in 0..out.frames {
            for (k, got) in out.frame(m).iter().enumerate() {
                let want: Complex64 = (0..window_len)
                    .map(|n| x.samples()[m * hop + n] * w[n] * Complex64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / fft_size as f64))
                    .sum();
                worst_stft = worst_stft.max((got - want).norm());
            }
        }
    }
    ensure!(worst_stft < 1e-9, "STFT deviates from the direct DFT by {worst_stft:.3e}");

    let noise = unit_noise(100_352, 5);
    let cfg = WelchConfig::default();
    let segments = cfg.segments(noise.len());
    ensure!(segments >= 50, "{segments} segments");
    let psd = welch_psd(&noise, &cfg).map_err(|e| e.to_string())?;
    let mean = psd.power_density.iter().sum::<f64>() / psd.power_density.len() as f64;
    let welch_err = mean * 20e6 - 1.0;
    ensure!(welch_err.abs() < 0.1, "Welch density off by {:.1} %", 100.0 * welch_err);

    let clock = SampleClock::paper();
    let mut worst_band = 1.0f64;
    for (i, (center, bw)) in [(3e6, 4e6), (-5e6, 2e6), (0.0, 5e6), (7e6, 4e6)].into_iter().enumerate() {
        let j = synth_pbnj(1.0, center, bw, 6, &clock, &mut rng(11 + i as u64)).map_err(|e| e.to_string())?;
        let mut buf = j.samples().to_vec();
        rustfft::FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let n = buf.len();
        let (mut inside, mut total) = (0.0, 0.0);
        for (k, v) in buf.iter().enumerate() {
            let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 } * 20e6 / n as f64;
            total += v.norm_sqr();
            if (f - center).abs() <= bw / 2.0 {
                inside += v.norm_sqr();
            }
        }
        worst_band = worst_band.min(inside / total);
    }
    ensure!(worst_band >= 0.9, "PBNJ in-band fraction {worst_band:.3}");
    Ok(format!(
        "STFT error {worst_stft:.1e}, Welch {segments} segments off by {:.2} %, PBNJ in-band >= {:.1} %, {}",
        100.0 * welch_err,
        100.0 * worst_band,
        within(t.elapsed(), 60)?
    ))
}

// 5 and 6. desk-scale learning and ablation

fn desk_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(Scale::Desk);
    let grid = &mut cfg.generation.grid;
    grid.jnr_min_db = 0.0;
    grid.jnr_max_db = 10.0;
    grid.jnr_step_db = 10.0;
    grid.realizations = 100;
    cfg.generation.master_seed = seed;
    cfg.train.master_seed = seed;
    cfg
}

fn desk_learning(root: &Path, manifest: &mut Option<PathBuf>) -> Outcome {
    let cfg = desk_config(0);
    ensure!(cfg.model.stft_channels == vec![16, 32, 64, 128] && cfg.model.input_side == 64, "desk model {:?}", cfg.model);
    let t = Instant::now();
    let data = root.join("desk");
    let m = cmd_synth(&cfg, &data, 1).map_err(|e| format!("{e:#}"))?;
    ensure!(m.records.len() == 1800, "{} records", m.records.len());
    let synth_s = t.elapsed().as_secs_f64();
    *manifest = Some(data.join("manifest.jsonl"));
    let summary = cmd_train(&data.join("manifest.jsonl"), &cfg, &root.join("desk_train"), 1).map_err(|e| format!("{e:#}"))?;
    let train_s = t.elapsed().as_secs_f64() - synth_s;
    let oa = summary.mean_test_oa;
    let detail = format!(
        "test OA {oa:.2} % on {} params after {} epochs (chance 11.1 %), synth {synth_s:.0} s + train {train_s:.0} s",
        summary.params, cfg.train.epochs
    );
    ensure!(oa >= 90.0, "{detail}");
    ensure!(t.elapsed().as_secs() < 3600, "{detail}: over 60 min");
    Ok(detail)
}

fn ablation(root: &Path, manifest: Option<&Path>) -> Outcome {
    let manifest = match manifest {
        Some(m) => m.to_path_buf(),
        None => {
            let data = root.join("desk");
            cmd_synth(&desk_config(0), &data, 1).map_err(|e| format!("{e:#}"))?;
            data.join("manifest.jsonl")
        }
    };
    let mut cfg = desk_config(0);
    cfg.train.monte_carlo_runs = 3;
    let t = Instant::now();
    let rows = cmd_ablate(&manifest, &cfg, &root.join("ablation"), 1).map_err(|e| format!("{e:#}"))?;
    let oa = |v: Variant| rows.iter().find(|r| r.variant == v).map(|r| r.mean_oa).unwrap();
    let (full, no_se, no_psd, no_sk) = (oa(Variant::Full), oa(Variant::NoSeFusion), oa(Variant::NoPsdStream), oa(Variant::NoSkAcb));
    let detail = format!(
        "mean OA over 3 seeds: full {full:.2}, no-se-fusion {no_se:.2}, no-psd-stream {no_psd:.2}, no-sk-acb {no_sk:.2} ({:.0} s)",
        t.elapsed().as_secs_f64()
    );
    ensure!(full >= no_se && no_se >= no_psd.max(no_sk), "{detail}");
    Ok(detail)
}

// 7. parameter count

fn parameter_count() -> Outcome {
    let cfg = ModelConfig::paper();
    let model = Skanet::<f32>::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let n = model.count_params();
    let reference = 10.63e6;
    let dev = n as f64 / reference - 1.0;
    let detail = format!(
        "{n} parameters ({:+.1} % vs 10.63 M); side {}, stem {}, STFT {:?}, PSD stem {}, PSD {:?}, SK dilations {:?}, head {}",
        100.0 * dev,
        cfg.input_side,
        cfg.stem_channels,
        cfg.stft_channels,
        cfg.psd_stem_channels,
        cfg.psd_channels,
        cfg.sk_dilations,
        cfg.head_hidden
    );
    ensure!(dev.abs() <= 0.2, "{detail}");
    Ok(detail)
}

// 8. FLOPs audit

fn flops_audit() -> Outcome {
    // conv 3x3 1->2 stride 1 pad 1, conv 1x3 2->3 stride 2 pad (0, 1), linear -> 4
    let mut r = rng(8);
    let x: Vec<f64> = (0..36).map(|_| r.random_range(-1.0..1.0)).collect();
    let k1: Vec<f64> = (0..18).map(|_| r.random_range(-1.0..1.0)).collect();
    let k2: Vec<f64> = (0..18).map(|_| r.random_range(-1.0..1.0)).collect();
    let (y1, (h1, w1), macs1) = naive_conv(&x, (1, 1, 6, 6), &k1, (2, 3, 3), 1, (1, 1), 1);
    let (y2, (h2, w2), macs2) = naive_conv(&y1, (1, 2, h1, w1), &k2, (3, 1, 3), 2, (0, 1), 1);
    let (n_in, n_out) = (y2.len(), 4);
    let (mut muls, mut adds) = (0u64, 0u64);
    for o in 0..n_out {
        let mut acc = y2[0] * (o as f64 + 0.5);
        muls += 1;
        for v in &y2[1..] {
            acc += v * (o as f64 + 0.5);
            muls += 1;
            adds += 1;
        }
        ensure!(acc.is_finite(), "non-finite output");
    }
    let report = FlopsReport::from_layers(vec![
        ("conv1".into(), LayerKind::Conv { h: h1, w: w1, kh: 3, kw: 3, c_in: 1, c_out: 2 }),
        ("conv2".into(), LayerKind::Conv { h: h2, w: w2, kh: 1, kw: 3, c_in: 2, c_out: 3 }),
        ("fc".into(), LayerKind::Linear { n_in, n_out }),
    ]);
    ensure!(report.conv_total == 2 * (macs1 + macs2), "conv FLOPs {} vs 2 x {} MACs", report.conv_total, macs1 + macs2);
    ensure!(report.linear_total == muls + adds, "linear FLOPs {} vs {muls} mul + {adds} add", report.linear_total);
    Ok(format!(
        "conv {} = 2 x {} MACs, linear {} = {muls} mul + {adds} add, total {}",
        report.conv_total,
        macs1 + macs2,
        report.linear_total,
        report.total()
    ))
}

// 9. metrics

/// Hand counts: `(trace, total)` and per class `(tp, fp, fn)`.
struct Hand {
    counts: Vec<u64>,
    trace_total: (u64, u64),
    classes: Vec<(u64, u64, u64)>,
}

fn hand(counts: &[u64], trace_total: (u64, u64), classes: &[(u64, u64, u64)]) -> Hand {
    Hand { counts: counts.to_vec(), trace_total, classes: classes.to_vec() }
}

/// `a` on the diagonal, `b` in the next class cyclically: tp = a, fp = fn = b.
fn cyclic(k: usize, a: u64, b: u64) -> Hand {
    let mut counts = vec![0; k * k];
    for t in 0..k {
        counts[t * k + t] = a;
        counts[t * k + (t + 1) % k] += b;
    }
    Hand { counts, trace_total: (k as u64 * a, k as u64 * (a + b)), classes: vec![(a, b, b); k] }
}

/// Class 0 has `n0` right; every other class has `a` right and `b`
/// predicted as class 0.
fn sink(k: usize, n0: u64, a: u64, b: u64) -> Hand {
    let mut counts = vec![0; k * k];
    counts[0] = n0;
    for t in 1..k {
        counts[t * k + t] = a;
        counts[t * k] = b;
    }
    let km1 = k as u64 - 1;
    let mut classes = vec![(n0, km1 * b, 0)];
    classes.extend(std::iter::repeat_n((a, 0, b), k - 1));
    Hand { counts, trace_total: (n0 + km1 * a, n0 + km1 * (a + b)), classes }
}

fn hand_cases() -> Vec<Hand> {
    vec![
        hand(&[8, 2, 1, 9], (17, 20), &[(8, 1, 2), (9, 2, 1)]),
        hand(&[5, 5, 0, 10], (15, 20), &[(5, 0, 5), (10, 5, 0)]),
        hand(&[4, 1, 1, 4], (8, 10), &[(4, 1, 1), (4, 1, 1)]),
        hand(&[3, 1, 0, 0, 2, 2, 1, 0, 5], (10, 14), &[(3, 1, 1), (2, 1, 2), (5, 2, 1)]),
        hand(&[0, 2, 1, 0, 3, 0, 0, 0, 4], (7, 10), &[(0, 0, 3), (3, 2, 0), (4, 1, 0)]),
        hand(&[6, 0, 0, 0], (6, 6), &[(6, 0, 0), (0, 0, 0)]),
        hand(&[0, 3, 7, 0], (0, 10), &[(0, 7, 3), (0, 3, 7)]),
        hand(&[10, 0, 0, 0, 10, 0, 5, 5, 0], (20, 30), &[(10, 5, 0), (10, 5, 0), (0, 0, 10)]),
        hand(&[1, 0, 99, 0], (1, 100), &[(1, 99, 0), (0, 0, 99)]),
        hand(&[2, 3, 0, 0, 3, 2, 0, 0, 0, 0, 6, 0, 0, 0, 1, 5], (15, 22), &[(2, 3, 3), (2, 3, 3), (6, 1, 0), (5, 0, 1)]),
        cyclic(9, 10, 0),
        cyclic(3, 1, 0),
        cyclic(3, 7, 3),
        cyclic(5, 9, 1),
        cyclic(9, 18, 2),
        cyclic(4, 1, 1),
        sink(3, 5, 4, 2),
        sink(4, 10, 6, 3),
        sink(9, 20, 15, 5),
        sink(2, 1, 1, 1),
    ]
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn metrics() -> Outcome {
    let cases = hand_cases();
    for (i, h) in cases.iter().enumerate() {
        let k = h.classes.len();
        let cm = ConfusionMatrix::from_counts(k, h.counts.clone()).map_err(|e| e.to_string())?;
        let (trace, total) = h.trace_total;
        let oa = overall_accuracy(&cm).map_err(|e| e.to_string())?;
        ensure!(oa == 100.0 * trace as f64 / total as f64, "matrix {i}: OA {oa}");
        for (c, (m, &(tp, fp, fn_))) in precision_recall_f1(&cm).iter().zip(&h.classes).enumerate() {
            ensure!((m.tp, m.fp, m.fn_) == (tp, fp, fn_), "matrix {i} class {c}: counts {:?}", (m.tp, m.fp, m.fn_));
            ensure!(m.precision == ratio(tp, tp + fp), "matrix {i} class {c}: precision {}", m.precision);
            ensure!(m.recall == ratio(tp, tp + fn_), "matrix {i} class {c}: recall {}", m.recall);
            // harmonic mean of tp/(tp+fp) and tp/(tp+fn)
            let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
            ensure!((m.f1 - f1).abs() <= 1e-15, "matrix {i} class {c}: F1 {} vs {f1}", m.f1);
            ensure!(m.degenerate == (tp + fp == 0 || tp + fn_ == 0), "matrix {i} class {c}: degeneracy flag");
        }
    }
    Ok(format!("{} matrices", cases.len()))
}

// 10. determinism

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(Scale::Desk);
    let g = &mut cfg.generation;
    g.clock = SampleClock::new(20e6, 4000).unwrap();
    g.grid.jnr_min_db = 0.0;
    g.grid.jnr_max_db = 10.0;
    g.grid.realizations = 10;
    g.features.side = 16;
    g.features.stft_fft_size = 256;
    g.features.welch = WelchConfig { segment_len: 512, overlap_fraction: 0.5, fft_size: 1024, window: WindowKind::Hamming };
    g.master_seed = seed;
    cfg.model = ModelConfig::paper().scaled(16, 16);
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.train.master_seed = seed;
    cfg
}

fn determinism(root: &Path) -> Outcome {
    let cfg = tiny_config(5);
    let run = |tag: &str, jobs: usize| -> Result<(Vec<u8>, Vec<u8>), String> {
        let data = root.join(format!("det_{tag}"));
        cmd_synth(&cfg, &data, jobs).map_err(|e| format!("{e:#}"))?;
        let out = root.join(format!("det_{tag}_train"));
        cmd_train(&data.join("manifest.jsonl"), &cfg, &out, 1).map_err(|e| format!("{e:#}"))?;
        let manifest = std::fs::read(data.join("manifest.jsonl")).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(out.join(CHECKPOINT_FILE)).map_err(|e| e.to_string())?;
        Ok((manifest, ckpt))
    };
    let (m1, c1) = run("a", 1)?;
    let (m2, c2) = run("b", 1)?;
    ensure!(c1 == c2, "checkpoints differ between identical single-threaded runs");
    ensure!(m1 == m2, "manifests differ between identical runs");
    let mut manifests = vec![m1];
    for jobs in [2, 4] {
        let data = root.join(format!("det_jobs{jobs}"));
        cmd_synth(&cfg, &data, jobs).map_err(|e| format!("{e:#}"))?;
        manifests.push(std::fs::read(data.join("manifest.jsonl")).map_err(|e| e.to_string())?);
    }
    ensure!(manifests.iter().all(|m| *m == manifests[0]), "manifest depends on --jobs");
    Ok(format!("checkpoints of {} bytes identical, manifests identical at jobs 1, 2, 4", c1.len()))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("SKANET_ACCEPT").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let root = tempfile::tempdir().expect("scratch directory");
    let mut desk_manifest = None;
    let mut failed = 0;
    for id in 1..=10 {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (name, outcome) = {
            let mut body = || -> (&str, Outcome) {
                match id {
                    1 => ("kernel fusion equivalence", fusion()),
                    2 => ("gradient suite", gradients()),
                    3 => ("signal calibration", calibration()),
                    4 => ("spectral oracles", spectral()),
                    5 => ("desk-scale learning", desk_learning(root.path(), &mut desk_manifest)),
                    6 => ("ablation ordering", ablation(root.path(), desk_manifest.as_deref())),
                    7 => ("parameter count", parameter_count()),
                    8 => ("FLOPs audit", flops_audit()),
                    9 => ("metrics correctness", metrics()),
                    _ => ("determinism", determinism(root.path())),
                }
            };
            match catch_unwind(AssertUnwindSafe(&mut body)) {
                Ok(r) => r,
                Err(p) => {
                    let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                    ("panicked", Err(msg.unwrap_or_default()))
                }
            }
        };
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
