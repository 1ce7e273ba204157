use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skanet_tensor::{
    conv_output_size, BatchNormOptions, Conv2dOptions, Mode, RunningStats, Tape, Tensor,
};

/// Direct six-loop cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    k: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    (ph, pw): (usize, usize),
    dil: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * ph - dil * (kh - 1) - 1) / stride + 1;
    let wo = (w + 2 * pw - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i * dil) as isize - ph as isize;
                                let ix = (xo * stride + j * dil) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((n * ci + c) * h + iy as usize) * w + ix as usize]
                                    * k[((o * ci + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((n * co + o) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn dilated_conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tape = Tape::<f64>::new();
    let xv = tape.constant(Tensor::new(vec![1, 1, 5, 5], x.clone()).unwrap());
    let kv = tape.constant(Tensor::new(vec![1, 1, 3, 3], k.clone()).unwrap());
    let opts = Conv2dOptions {
        stride: 1,
        padding: (2, 2),
        dilation: 2,
    };
    let y = tape.conv2d(xv, kv, None, opts).unwrap();
    let (want, ho, wo) = naive_conv(&x, &k, (1, 1, 5, 5), (1, 3, 3), 1, (2, 2), 2);
    assert_eq!(tape.shape(y), vec![1, 1, ho, wo]);
    for (a, b) in tape.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv_shape_algebra_matches_oracle(
        ci in 1usize..3, co in 1usize..3, h in 3usize..9, w in 3usize..9,
        kh in prop::sample::select(vec![1usize, 3]), kw in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3, ph in 0usize..3, pw in 0usize..3, dil in 1usize..3, seed in 0u64..1000,
    ) {
        let fits = conv_output_size(h, kh, ph, stride, dil).is_some()
            && conv_output_size(w, kw, pw, stride, dil).is_some();
        prop_assume!(fits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * ci * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..co * ci * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::new(vec![2, ci, h, w], x.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![co, ci, kh, kw], k.clone()).unwrap());
        let opts = Conv2dOptions { stride, padding: (ph, pw), dilation: dil };
        let y = tape.conv2d(xv, kv, None, opts).unwrap();
        let (want, ho, wo) = naive_conv(&x, &k, (2, ci, h, w), (co, kh, kw), stride, (ph, pw), dil);
        prop_assert_eq!(tape.shape(y), vec![2, co, ho, wo]);
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn batchnorm_train_standardises_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, c, h, w) = (4, 3, 5, 5);
    let x = Tensor::from_fn(vec![b, c, h, w], |i| {
        let ch = (i / (h * w)) % c;
        rng.random_range(-1.0..1.0) * (ch as f64 + 1.0) + 3.0 * ch as f64
    });
    let tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(vec![c]));
    let be = tape.constant(Tensor::zeros(vec![c]));
    let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
    let y = tape
        .batch_norm(
            xv,
            g,
            be,
            RunningStats {
                mean: &mut rm,
                var: &mut rv,
            },
            Mode::Train,
            BatchNormOptions::default(),
        )
        .unwrap();
    let yv = tape.value(y);
    for ch in 0..c {
        let vals: Vec<f64> = (0..b)
            .flat_map(|n| yv.data()[(n * c + ch) * h * w..(n * c + ch + 1) * h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
    }
    // running stats moved towards the batch statistics
    assert!(rm[2] > 0.0 && rv[2] > 1.0);
}

#[test]
fn batchnorm_identity_and_zero_gain() {
    let tape = Tape::<f64>::new();
    // zero mean, unit (biased) variance per channel
    let x = tape.constant(Tensor::new(vec![4, 1], vec![1.0, -1.0, 1.0, -1.0]).unwrap());
    let g = tape.constant(Tensor::ones(vec![1]));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let y = tape
        .batch_norm(
            x,
            g,
            b,
            RunningStats {
                mean: &mut rm,
                var: &mut rv,
            },
            Mode::Train,
            BatchNormOptions::default(),
        )
        .unwrap();
    for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
        assert!((a - b).abs() < 1e-5);
    }
    let g0 = tape.constant(Tensor::zeros(vec![1]));
    let b7 = tape.constant(Tensor::full(vec![1], 0.7));
    let y = tape
        .batch_norm(
            x,
            g0,
            b7,
            RunningStats {
                mean: &mut rm,
                var: &mut rv,
            },
            Mode::Eval,
            BatchNormOptions::default(),
        )
        .unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.7));
}

#[test]
fn batchnorm_rejects_channel_mismatch() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![2, 3, 2, 2]));
    let g = tape.constant(Tensor::ones(vec![2]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
    let r = tape.batch_norm(
        x,
        g,
        b,
        RunningStats {
            mean: &mut rm,
            var: &mut rv,
        },
        Mode::Eval,
        BatchNormOptions::default(),
    );
    assert!(r.is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_fn(vec![7, 5, 3], |_| {
        rng.random_range(-20.0..20.0)
    }));
    let y = tape.softmax(x, 1).unwrap();
    let yv = tape.value(y);
    for o in 0..7 {
        for i in 0..3 {
            let s: f32 = (0..5).map(|k| yv.data()[(o * 5 + k) * 3 + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    drop(yv);
    let u = tape.constant(Tensor::full(vec![1, 3], 0.3));
    let p = tape.softmax(u, 1).unwrap();
    for v in tape.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
}

#[test]
fn global_avg_pool_examples() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(
        Tensor::new(
            vec![1, 2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0],
        )
        .unwrap(),
    );
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5, 5.0]);
    // gradient is 1/(HW) everywhere
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 1, 3, 4]));
    let y = tape.global_avg_pool(x).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert!(tape
        .grad(x)
        .unwrap()
        .data()
        .iter()
        .all(|g| (*g - 1.0 / 12.0).abs() < 1e-15));
}

#[test]
fn linear_examples_and_naive_oracle() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
    let eye = tape.constant(Tensor::from_fn(vec![3, 3], |i| {
        if i % 4 == 0 {
            1.0
        } else {
            0.0
        }
    }));
    let zero_b = tape.constant(Tensor::zeros(vec![3]));
    let y = tape.linear(x, eye, Some(zero_b)).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    let zw = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::new(vec![2], vec![0.25, -4.0]).unwrap());
    let y = tape.linear(x, zw, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25, -4.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(); // 2x4
    let ws: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(); // 3x4
    let x = tape.constant(Tensor::new(vec![2, 4], xs.clone()).unwrap());
    let w = tape.constant(Tensor::new(vec![3, 4], ws.clone()).unwrap());
    let y = tape.linear(x, w, None).unwrap();
    for r in 0..2 {
        for o in 0..3 {
            let want: f64 = (0..4).map(|i| xs[r * 4 + i] * ws[o * 4 + i]).sum();
            assert!((tape.value(y).data()[r * 3 + o] - want).abs() < 1e-6);
        }
    }
    let bad = tape.constant(Tensor::zeros(vec![3, 5]));
    assert!(tape.linear(x, bad, None).is_err());
}

#[test]
fn concat_of_stream_features() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(vec![1, 512]));
    let b = tape.constant(Tensor::zeros(vec![1, 128]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(c), vec![1, 640]);
}

#[test]
fn dropout_statistics_and_modes() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![100_000]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in [Mode::Train, Mode::Eval] {
        let y = tape.dropout(x, 0.0, mode, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }
    let y = tape.dropout(x, 0.6, Mode::Eval, &mut rng).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    let y = tape.dropout(x, 0.6, Mode::Train, &mut rng).unwrap();
    let yv = tape.value(y);
    let survivors: Vec<f64> = yv.data().iter().copied().filter(|v| *v != 0.0).collect();
    let frac = survivors.len() as f64 / 100_000.0;
    assert!((frac - 0.4).abs() < 0.01, "survivor fraction {frac}");
    assert!(survivors.iter().all(|v| (*v - 2.5).abs() < 1e-12));
    drop(yv);
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
}
