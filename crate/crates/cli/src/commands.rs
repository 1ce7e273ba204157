//! The pipeline subcommands. Every command writes its outputs and the
//! effective config under its output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use skanet::dataset::{
    class_dir, featurize_record, generate_dataset, load_checkpoint, load_features, read_manifest, save_checkpoint,
    write_image, write_manifest, write_text, Manifest, MANIFEST_FILE,
};
use skanet::metrics::{class_metrics_csv, flops_model, precision_recall_f1, ConfusionMatrix, FlopsReport};
use skanet::model::{ModelConfig, Skanet, Variant};
use skanet::signal::{splitmix64, CompoundClass};
use skanet::training::{evaluate, fit, split_dataset, Dataset, EpochLog, Split, TrainConfig};
use skanet::Error;
use skanet_tensor::{Mode, Tensor};

use crate::config::RunConfig;
use crate::plot;

pub const CONFIG_ECHO: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const FUSED_CHECKPOINT_FILE: &str = "model_fused.ckpt";
pub const SPLIT_FILE: &str = "split.json";

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join(CONFIG_ECHO), &cfg.to_toml()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing report")?;
    write_text(path, &(text + "\n"))?;
    Ok(())
}

fn manifest_root(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Seed of Monte Carlo run `run`; init and batch order use separate streams.
pub fn run_seeds(master_seed: u64, run: usize) -> (u64, u64) {
    let base = splitmix64(master_seed ^ splitmix64(run as u64 + 1));
    (splitmix64(base ^ 0x1), splitmix64(base ^ 0x2))
}

/// Generates the configured grid under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Manifest> {
    let manifest = generate_dataset(&cfg.generation, out, jobs)?;
    echo_config(cfg, out)?;
    Ok(manifest)
}

/// Computes feature images for a manifest whose records carry only signals
/// and writes an updated manifest under `out`.
pub fn cmd_featurize(manifest_path: &Path, out: &Path, jobs: usize) -> Result<Manifest> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_root(manifest_path);
    let mut gen = manifest.config.clone();
    gen.write_features = true;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("worker pool")?;
    let records = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| -> Result<_> {
                let (tfi, psd) = featurize_record(&root, r, &gen)?;
                let dir = class_dir(manifest.class(r)?);
                let mut rec = r.clone();
                rec.tfi_path = Some(format!("{dir}/{}.tfi.jlt", r.sample_id));
                rec.psd_path = Some(format!("{dir}/{}.psd.jlt", r.sample_id));
                write_image(&out.join(rec.tfi_path.as_ref().expect("set above")), &tfi)?;
                write_image(&out.join(rec.psd_path.as_ref().expect("set above")), &psd)?;
                if root != out {
                    // keep the signal reachable from the new manifest
                    rec.signal_path = r.signal_path.as_ref().map(|p| absolute(&root.join(p)));
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = Manifest { version: manifest.version, config: gen, records };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn absolute(path: &Path) -> String {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()).to_string_lossy().into_owned()
}

fn load_dataset(manifest_path: &Path, model: &ModelConfig, jobs: usize) -> Result<(Manifest, Dataset<f32>)> {
    let manifest = read_manifest(manifest_path)?;
    let side = manifest.config.features.side;
    if side != model.input_side {
        return Err(Error::Config(format!("manifest images are {side} px but model.input_side is {}", model.input_side)).into());
    }
    let data = load_features(&manifest_root(manifest_path), &manifest, jobs)?;
    Ok((manifest, data))
}

fn make_split(data: &Dataset<f32>, train: &TrainConfig) -> Result<Split> {
    let split = split_dataset(&data.strata(), train.split, train.master_seed)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok(split)
}

/// Trains one model and returns it with its log.
fn train_run(
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset<f32>,
    split: &Split,
    run: usize,
    label: &str,
) -> Result<(Skanet<f32>, Vec<EpochLog>)> {
    let (init_seed, order_seed) = run_seeds(train.master_seed, run);
    let mut model = Skanet::<f32>::new(model_cfg.clone(), init_seed)?;
    let logs = fit(&mut model, data, split, train, order_seed, |log| {
        eprintln!("{label} run {run} epoch {}: lr {:.3e} train loss {:.4} val OA {:.2}", log.epoch, log.lr, log.train_loss, log.val_oa.unwrap_or(f64::NAN));
    })?;
    Ok((model, logs))
}

fn log_text(logs: &[EpochLog]) -> String {
    let mut text = format!("{}\n", EpochLog::HEADER);
    for l in logs {
        text.push_str(&l.to_line());
        text.push('\n');
    }
    text
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: usize,
    pub params: usize,
    /// Test-split OA of each run in percent; empty when there is no test split.
    pub test_oa: Vec<f64>,
    pub mean_test_oa: f64,
    pub std_test_oa: f64,
    pub checkpoint: PathBuf,
}

/// Trains `monte_carlo_runs` models on the manifest's features. Run 0 is
/// saved as `model.ckpt`, later runs as `model_run{i}.ckpt`.
pub fn cmd_train(manifest_path: &Path, cfg: &RunConfig, out: &Path, jobs: usize) -> Result<TrainSummary> {
    let (_, data) = load_dataset(manifest_path, &cfg.model, jobs)?;
    let split = make_split(&data, &cfg.train)?;
    echo_config(cfg, out)?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    let runs = cfg.train.monte_carlo_runs.max(1);
    let mut test_oa = Vec::new();
    let mut params = 0;
    for run in 0..runs {
        let (mut model, logs) = train_run(&cfg.model, &cfg.train, &data, &split, run, "train")?;
        params = model.count_params();
        let suffix = if run == 0 { String::new() } else { format!("_run{run}") };
        write_text(&out.join(format!("train_log{suffix}.csv")), &log_text(&logs))?;
        save_checkpoint(&model, &out.join(format!("model{suffix}.ckpt")))?;
        if !split.test.is_empty() {
            test_oa.push(evaluate(&mut model, &data, &split.test, cfg.train.batch_size)?.accuracy);
        }
    }
    let (mean, std) = mean_std(&test_oa);
    let summary = TrainSummary { runs, params, test_oa, mean_test_oa: mean, std_test_oa: std, checkpoint: out.join(CHECKPOINT_FILE) };
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JnrRow {
    pub jnr_db: f64,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub loss: f64,
    pub overall_accuracy: f64,
    pub per_jnr: Vec<JnrRow>,
    pub confusion: ConfusionMatrix,
}

/// Evaluates a checkpoint on the test indices of `split` or, without a
/// split, on every record.
pub fn cmd_eval(checkpoint: &Path, manifest_path: &Path, split: Option<&Path>, out: &Path, jobs: usize) -> Result<EvalSummary> {
    let mut model = load_checkpoint::<f32>(checkpoint)?;
    let (_, data) = load_dataset(manifest_path, model.config(), jobs)?;
    let indices: Vec<usize> = match split {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
            let split: Split = serde_json::from_str(&text).map_err(|e| Error::Corrupt { path: path.into(), field: e.to_string() })?;
            split.test
        }
        None => (0..data.len()).collect(),
    };
    if let Some(bad) = indices.iter().find(|i| **i >= data.len()) {
        return Err(Error::Config(format!("split index {bad} outside a dataset of {}", data.len())).into());
    }
    let mut eval = evaluate(&mut model, &data, &indices, 64)?;
    eval.confusion.class_names = CompoundClass::ALL.iter().map(|c| c.name()).collect();
    let mut by_jnr: BTreeMap<i64, (f64, usize, usize)> = BTreeMap::new();
    for (&i, &(y, pred)) in indices.iter().zip(&eval.predictions) {
        let jnr = data.jnr_db[i];
        let e = by_jnr.entry((jnr * 1000.0).round() as i64).or_insert((jnr, 0, 0));
        e.1 += 1;
        e.2 += usize::from(y == pred);
    }
    let per_jnr: Vec<JnrRow> = by_jnr
        .into_values()
        .map(|(jnr_db, samples, correct)| JnrRow { jnr_db, samples, correct, accuracy: 100.0 * correct as f64 / samples as f64 })
        .collect();

    write_text(&out.join("confusion.csv"), &eval.confusion.to_csv())?;
    write_text(&out.join("class_metrics.csv"), &class_metrics_csv(&eval.confusion))?;
    let mut jnr_csv = String::from("jnr_db,samples,correct,accuracy\n");
    for r in &per_jnr {
        jnr_csv.push_str(&format!("{},{},{},{:.4}\n", r.jnr_db, r.samples, r.correct, r.accuracy));
    }
    write_text(&out.join("per_jnr.csv"), &jnr_csv)?;
    write_bytes(&out.join("confusion.pgm"), &plot::confusion_pgm(&eval.confusion, 16))?;
    write_bytes(&out.join("per_jnr.pgm"), &plot::accuracy_bars_pgm(&per_jnr.iter().map(|r| r.accuracy).collect::<Vec<_>>(), 8))?;
    let summary = EvalSummary {
        samples: indices.len(),
        loss: eval.loss,
        overall_accuracy: eval.accuracy,
        per_jnr,
        confusion: eval.confusion,
    };
    write_json(&out.join("metrics.json"), &serde_json::json!({
        "samples": summary.samples,
        "loss": summary.loss,
        "overall_accuracy": summary.overall_accuracy,
        "per_class": precision_recall_f1(&summary.confusion),
        "per_jnr": summary.per_jnr,
        "model": model.config(),
    }))?;
    Ok(summary)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub params_train_form: usize,
    pub params_fused: usize,
    pub probes: usize,
    /// Largest output deviation between forms at stored precision.
    pub max_abs_deviation: f64,
    /// The same probe with both forms cast to 64-bit.
    pub max_abs_deviation_f64: f64,
    pub checkpoint: PathBuf,
}

/// Folds every ACB into a single kernel and checks the outputs agree.
pub fn cmd_fuse(checkpoint: &Path, out: &Path, seed: u64) -> Result<FuseReport> {
    let mut model = load_checkpoint::<f32>(checkpoint)?;
    let mut fused = model.fuse()?;
    let side = model.config().input_side;
    let probes = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = || Tensor::<f32>::from_fn(vec![probes, 1, side, side], |_| rng.random());
    let (tfi, psd) = (input(), input());
    let a = model.predict(&tfi, &psd, Mode::Eval, &mut rng)?;
    let b = fused.predict(&tfi, &psd, Mode::Eval, &mut rng)?;
    let (mut wide, mut wide_fused) = (model.cast::<f64>(), model.cast::<f64>().fuse()?);
    let (tfi64, psd64) = (tfi.cast::<f64>(), psd.cast::<f64>());
    let c = wide.predict(&tfi64, &psd64, Mode::Eval, &mut rng)?;
    let d = wide_fused.predict(&tfi64, &psd64, Mode::Eval, &mut rng)?;
    let path = out.join(FUSED_CHECKPOINT_FILE);
    save_checkpoint(&fused, &path)?;
    let report = FuseReport {
        params_train_form: model.count_params(),
        params_fused: fused.count_params(),
        probes,
        max_abs_deviation: a.max_abs_diff(&b) as f64,
        max_abs_deviation_f64: c.max_abs_diff(&d),
        checkpoint: path,
    };
    write_json(&out.join("fuse_report.json"), &report)?;
    Ok(report)
}

/// FLOPs of the configured model, or of the hand-listed layers if any.
pub fn cmd_flops(cfg: &RunConfig) -> Result<FlopsReport> {
    if cfg.flops.layers.is_empty() {
        Ok(flops_model(&cfg.model, cfg.model.input_side, cfg.flops.counting)?)
    } else {
        Ok(FlopsReport::from_layers(cfg.flops.layers.iter().map(|l| l.to_layer()).collect()))
    }
}

/// Writes the FLOPs report as a table and as delimited rows.
pub fn write_flops(cfg: &RunConfig, report: &FlopsReport, out: &Path) -> Result<()> {
    write_text(&out.join("flops.txt"), &report.to_table())?;
    write_text(&out.join("flops.csv"), &report.to_csv())?;
    echo_config(cfg, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub test_oa: Vec<f64>,
    pub mean_oa: f64,
    pub std_oa: f64,
}

/// Trains every ablation variant `monte_carlo_runs` times on the same split
/// and tabulates test OA.
pub fn cmd_ablate(manifest_path: &Path, cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<AblationRow>> {
    let (_, data) = load_dataset(manifest_path, &cfg.model, jobs)?;
    let split = make_split(&data, &cfg.train)?;
    if split.test.is_empty() {
        return Err(Error::Config("ablation needs a non-empty test split".into()).into());
    }
    echo_config(cfg, out)?;
    let runs = cfg.train.monte_carlo_runs.max(1);
    let mut rows = Vec::new();
    let mut run_csv = String::from("variant,run,test_oa\n");
    for variant in Variant::ALL {
        let model_cfg = cfg.model.clone().with_variant(variant);
        let mut test_oa = Vec::new();
        let mut params = 0;
        for run in 0..runs {
            let (mut model, logs) = train_run(&model_cfg, &cfg.train, &data, &split, run, variant.name())?;
            params = model.count_params();
            write_text(&out.join(format!("{}_run{run}.csv", variant.name())), &log_text(&logs))?;
            let oa = evaluate(&mut model, &data, &split.test, cfg.train.batch_size)?.accuracy;
            run_csv.push_str(&format!("{},{run},{oa:.4}\n", variant.name()));
            test_oa.push(oa);
        }
        let (mean_oa, std_oa) = mean_std(&test_oa);
        rows.push(AblationRow { variant, params, test_oa, mean_oa, std_oa });
    }
    let mut table = String::from("variant,params,runs,mean_oa,std_oa\n");
    for r in &rows {
        table.push_str(&format!("{},{},{},{:.4},{:.4}\n", r.variant.name(), r.params, r.test_oa.len(), r.mean_oa, r.std_oa));
    }
    write_text(&out.join("ablation.csv"), &table)?;
    write_text(&out.join("ablation_runs.csv"), &run_csv)?;
    Ok(rows)
}
