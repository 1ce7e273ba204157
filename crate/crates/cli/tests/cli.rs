//! End-to-end runs of the `skanet` binary on a tiny grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[generation]
master_seed = 3
[generation.clock]
sample_rate_hz = 20e6
num_samples = 4000
[generation.grid]
classes = [0, 1, 2, 3, 4, 5, 6, 7, 8]
jnr_min_db = 10.0
jnr_max_db = 10.0
realizations = 4
[generation.features]
side = 16
stft_fft_size = 256
[generation.features.welch]
segment_len = 512
overlap_fraction = 0.5
fft_size = 1024
window = "hamming"
[model]
input_side = 16
stem_channels = 4
stft_channels = [8, 16, 32, 64]
psd_stem_channels = 8
psd_channels = [8, 16]
[train]
epochs = 1
batch_size = 8
split = [0.5, 0.25, 0.25]
"#;

fn skanet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skanet")).args(args).current_dir(dir).env_remove("SKANET_OUT").output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    (dir, cfg)
}

#[test]
fn flops_of_one_conv_layer_matches_hand_value() {
    let (dir, _) = tiny_setup("");
    let cfg = dir.path().join("one.toml");
    fs::write(&cfg, "[[flops.layers]]\nkind = \"conv\"\nname = \"only\"\nh = 4\nw = 4\nkh = 3\nkw = 3\nc_in = 2\nc_out = 3\n").unwrap();
    let text = ok(skanet(&["flops", "--config", cfg.to_str().unwrap(), "--out", "f"], dir.path()));
    let total = text.lines().find(|l| l.starts_with("total")).unwrap();
    assert_eq!(total.split_whitespace().last().unwrap(), "1728");
    assert!(dir.path().join("f/flops.csv").exists());
    assert!(dir.path().join("f/config.toml").exists());
}

#[test]
fn pipeline_synth_train_fuse_eval() {
    let (dir, cfg) = tiny_setup("");
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    ok(skanet(&["synth", "--config", cfg, "--out", "data", "--jobs", "2"], d));
    let echoed = fs::read_to_string(d.join("data/config.toml")).unwrap();
    assert!(echoed.contains("realizations = 4"));
    let manifest = "data/manifest.jsonl";
    ok(skanet(&["train", manifest, "--config", cfg, "--out", "run"], d));
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch,lr,train_loss,val_loss,val_oa"));
    let fuse = ok(skanet(&["fuse", "run/model.ckpt", "--out", "fused"], d));
    assert!(fuse.contains("max deviation"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fused/fuse_report.json")).unwrap()).unwrap();
    assert!(report["max_abs_deviation"].as_f64().unwrap() < 1e-4);
    assert!(report["max_abs_deviation_f64"].as_f64().unwrap() < 1e-10);

    let eval = |ckpt: &str, out: &str| {
        ok(skanet(&["eval", ckpt, manifest, "--split", "run/split.json", "--out", out], d));
        fs::read_to_string(d.join(out).join("confusion.csv")).unwrap()
    };
    let plain = eval("run/model.ckpt", "eval_plain");
    let fused = eval("fused/model_fused.ckpt", "eval_fused");
    assert_eq!(plain, fused);
    assert_eq!(plain.lines().count(), 10);
    let per_jnr = fs::read_to_string(d.join("eval_plain/per_jnr.csv")).unwrap();
    assert!(per_jnr.lines().nth(1).unwrap().starts_with("10,"));
    for f in ["class_metrics.csv", "metrics.json", "confusion.pgm", "per_jnr.pgm"] {
        assert!(d.join("eval_plain").join(f).exists(), "{f}");
    }
}

#[test]
fn zero_epochs_writes_untrained_checkpoint() {
    let (dir, cfg) = tiny_setup("");
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    ok(skanet(&["synth", "--config", cfg, "--out", "data"], d));
    let zero = d.join("zero.toml");
    fs::write(&zero, TINY.replace("epochs = 1", "epochs = 0")).unwrap();
    let out = skanet(&["train", "data/manifest.jsonl", "--config", zero.to_str().unwrap(), "--out", "run"], d);
    assert_eq!(out.status.code(), Some(0));
    assert!(d.join("run/model.ckpt").exists());
    assert_eq!(fs::read_to_string(d.join("run/train_log.csv")).unwrap().lines().count(), 1);
}

#[test]
fn signal_only_manifest_can_be_featurized() {
    let (dir, cfg) = tiny_setup("");
    let d = dir.path();
    let signal_only = d.join("signals.toml");
    let text = TINY.replace("master_seed = 3", "master_seed = 3\nwrite_features = false");
    fs::write(&signal_only, text).unwrap();
    ok(skanet(&["synth", "--config", signal_only.to_str().unwrap(), "--out", "sig"], d));
    assert!(!d.join("sig/stj_lfm/c0_j000_r000000.tfi.jlt").exists());
    ok(skanet(&["featurize", "sig/manifest.jsonl", "--out", "feat"], d));
    ok(skanet(&["synth", "--config", cfg.to_str().unwrap(), "--out", "full"], d));
    for name in ["c0_j000_r000000.tfi.jlt", "c0_j000_r000000.psd.jlt"] {
        let a = fs::read(d.join("feat/stj_lfm").join(name)).unwrap();
        let b = fs::read(d.join("full/stj_lfm").join(name)).unwrap();
        assert_eq!(a.len(), b.len());
    }
    let m = fs::read_to_string(d.join("feat/manifest.jsonl")).unwrap();
    assert!(m.contains("\"tfi_path\":\"stj_lfm/"));
}

#[test]
fn exit_codes() {
    let (dir, cfg) = tiny_setup("");
    let d = dir.path();
    let bad = d.join("bad.toml");
    fs::write(&bad, "[train]\nepoch = 2\n").unwrap();
    let out = skanet(&["flops", "--config", bad.to_str().unwrap()], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("epoch"));

    assert_eq!(skanet(&["train", "missing/manifest.jsonl", "--scale", "desk"], d).status.code(), Some(2));
    assert_eq!(skanet(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(skanet(&["--help"], d).status.code(), Some(0));

    // an absurd learning rate overflows 32-bit activations
    let hot = d.join("hot.toml");
    fs::write(&hot, TINY.replace("epochs = 1", "epochs = 3\nlr_max = 1e38")).unwrap();
    ok(skanet(&["synth", "--config", cfg.to_str().unwrap(), "--out", "data"], d));
    let out = skanet(&["train", "data/manifest.jsonl", "--config", hot.to_str().unwrap(), "--out", "hot"], d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn default_output_root_comes_from_environment() {
    let (dir, cfg) = tiny_setup("");
    let out = Command::new(env!("CARGO_BIN_EXE_skanet"))
        .args(["flops", "--config", cfg.to_str().unwrap(), "--scale", "desk"])
        .current_dir(dir.path())
        .env("SKANET_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    // flops only writes files when --out is given explicitly
    assert!(!dir.path().join("root").exists());
    let synth = Command::new(env!("CARGO_BIN_EXE_skanet"))
        .args(["synth", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("SKANET_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(synth.status.success());
    assert!(dir.path().join("root/synth/manifest.jsonl").exists());
}
