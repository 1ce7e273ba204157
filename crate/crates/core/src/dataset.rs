//! Deterministic dataset generation and the on-disk formats.
//!
//! Tensor file: `JLT1`, dtype code (u8, 1 = f32, 2 = f64), rank (u8), one
//! little-endian u64 per dim, then the little-endian payload.
//!
//! Raw IQ file: interleaved I, Q as little-endian f32, one pair per sample.
//!
//! Manifest: JSON lines. The first line is a versioned header holding the
//! generation config; each following line is one [`SampleRecord`].
//!
//! Checkpoint: `JLC1`, a little-endian u64 header length, a JSON header with
//! the model config and the name, kind and shape of every entry, then the
//! entries' payloads in header order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use skanet_tensor::{DType, Real, Tensor};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Skanet};
use crate::signal::{rng_from_seed, sample_seed, synthesize_sample, CompoundClass, ComplexSignal, SampleClock};
use crate::spectral::{featurize, FeatureImage, ImageKind, StftConfig, WelchConfig};

pub const TENSOR_MAGIC: &[u8; 4] = b"JLT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JLC1";
pub const MANIFEST_FORMAT: &str = "skanet-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Sweep of classes, JNR levels and realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Class labels to generate.
    pub classes: Vec<usize>,
    pub jnr_min_db: f64,
    pub jnr_max_db: f64,
    pub jnr_step_db: f64,
    pub realizations: usize,
    pub pr_range_db: (f64, f64),
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            classes: (0..CompoundClass::ALL.len()).collect(),
            jnr_min_db: -25.0,
            jnr_max_db: 15.0,
            jnr_step_db: 1.0,
            realizations: 1000,
            pr_range_db: (-3.0, 3.0),
        }
    }
}

impl GridConfig {
    /// Inclusive JNR levels from min to max.
    pub fn jnr_levels(&self) -> Vec<f64> {
        if self.jnr_step_db <= 0.0 || self.jnr_max_db < self.jnr_min_db {
            return vec![self.jnr_min_db];
        }
        let n = ((self.jnr_max_db - self.jnr_min_db) / self.jnr_step_db + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.jnr_min_db + i as f64 * self.jnr_step_db).collect()
    }

    pub fn num_records(&self) -> usize {
        self.classes.len() * self.jnr_levels().len() * self.realizations
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.classes.iter().any(|c| CompoundClass::from_label(*c).is_none()) {
            return Err(Error::Config(format!("classes {:?} must be non-empty labels below 9", self.classes)));
        }
        if self.jnr_step_db.is_nan() || self.jnr_step_db <= 0.0 || self.jnr_max_db < self.jnr_min_db {
            return Err(Error::Config("JNR grid needs a positive step and max >= min".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be positive".into()));
        }
        if self.pr_range_db.0 > self.pr_range_db.1 {
            return Err(Error::Config("pr_range_db must be ordered".into()));
        }
        Ok(())
    }
}

/// How signals become images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub side: usize,
    /// STFT window for classes containing a pulse component.
    pub short_window: usize,
    pub long_window: usize,
    pub stft_fft_size: usize,
    pub welch: WelchConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { side: 224, short_window: 64, long_window: 128, stft_fft_size: 4096, welch: WelchConfig::default() }
    }
}

impl FeatureConfig {
    pub fn stft_for(&self, class: CompoundClass) -> StftConfig {
        let mut cfg = StftConfig::with_window(if class.has_pulse() { self.short_window } else { self.long_window });
        cfg.fft_size = self.stft_fft_size;
        cfg
    }

    /// STFT settings for a window length recorded in a manifest.
    pub fn stft_with(&self, window_len: usize) -> StftConfig {
        let mut cfg = StftConfig::with_window(window_len);
        cfg.fft_size = self.stft_fft_size;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub clock: SampleClock,
    pub grid: GridConfig,
    pub features: FeatureConfig,
    pub master_seed: u64,
    pub write_signals: bool,
    pub write_features: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            clock: SampleClock::paper(),
            grid: GridConfig::default(),
            features: FeatureConfig::default(),
            master_seed: 0,
            write_signals: true,
            write_features: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub class_label: usize,
    pub class_name: String,
    pub jnr_db: f64,
    pub jnr_index: usize,
    pub realization: usize,
    pub pr_db: f64,
    pub sample_seed: u64,
    pub stft_window_len: usize,
    /// Paths relative to the manifest directory.
    pub signal_path: Option<String>,
    pub tfi_path: Option<String>,
    pub psd_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    config: GenerationConfig,
    records: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub config: GenerationConfig,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn class(&self, record: &SampleRecord) -> Result<CompoundClass> {
        CompoundClass::from_label(record.class_label)
            .ok_or_else(|| Error::InvalidSpec(format!("record {} has label {}", record.sample_id, record.class_label)))
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes to a sibling temporary file and renames, so a file either exists
/// complete or not at all.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

pub fn signal_bytes(signal: &ComplexSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(signal.len() * 8);
    for z in signal.samples() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

/// Stores the signal as interleaved 32-bit I/Q.
pub fn write_signal(path: &Path, signal: &ComplexSignal) -> Result<()> {
    write_atomic(path, &signal_bytes(signal))
}

/// Reads interleaved 32-bit I/Q; the length must match `clock`.
pub fn read_signal(path: &Path, clock: SampleClock) -> Result<ComplexSignal> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    if bytes.len() != clock.num_samples * 8 {
        return Err(Error::corrupt(path, format!("length {} bytes, expected {}", bytes.len(), clock.num_samples * 8)));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    ComplexSignal::new(samples, clock).map_err(|_| Error::corrupt(path, "payload"))
}

fn push_values<T: Real>(out: &mut Vec<u8>, data: &[T]) {
    match T::DTYPE {
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        DType::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

fn parse_values<T: Real>(bytes: &[u8]) -> Vec<T> {
    match T::DTYPE {
        DType::F32 => bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])))
            .collect(),
    }
}

pub fn tensor_bytes<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * tensor.rank() + tensor.numel() * T::DTYPE.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for d in tensor.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    push_values(&mut out, tensor.data());
    out
}

pub fn write_tensor<T: Real>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    write_atomic(path, &tensor_bytes(tensor))
}

/// Parses a tensor file; any header field that disagrees with the payload
/// or with `T` is reported by name.
pub fn parse_tensor<T: Real>(path: &Path, bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 6 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::corrupt(path, "magic"));
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| Error::corrupt(path, format!("dtype code {}", bytes[4])))?;
    if dtype != T::DTYPE {
        return Err(Error::corrupt(path, format!("dtype {dtype:?}, expected {:?}", T::DTYPE)));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::corrupt(path, "dims"));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let numel = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d)).ok_or_else(|| Error::corrupt(path, "dims"))?;
    if bytes.len() - header != numel * dtype.size() {
        return Err(Error::corrupt(path, format!("payload length {} for dims {dims:?}", bytes.len() - header)));
    }
    Ok(Tensor::new(dims, parse_values(&bytes[header..]))?)
}

pub fn read_tensor<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    parse_tensor(path, &bytes)
}

/// Stores a feature image as an f32 tensor `[S, S]`.
pub fn write_image(path: &Path, image: &FeatureImage) -> Result<()> {
    write_tensor(path, &Tensor::new(vec![image.side, image.side], image.pixels.clone())?)
}

pub fn read_image(path: &Path, kind: ImageKind) -> Result<FeatureImage> {
    let t: Tensor<f32> = read_tensor(path)?;
    match t.shape() {
        [h, w] if h == w => Ok(FeatureImage { kind, side: *h, pixels: t.into_data() }),
        dims => Err(Error::corrupt(path, format!("dims {dims:?} are not a square image"))),
    }
}

fn manifest_text(manifest: &Manifest) -> Result<String> {
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: manifest.version,
        config: manifest.config.clone(),
        records: manifest.records.len(),
    };
    let json = |e: serde_json::Error| Error::InvalidSpec(format!("manifest serialization: {e}"));
    let mut out = serde_json::to_string(&header).map_err(json)?;
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&serde_json::to_string(r).map_err(json)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, manifest_text(manifest)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| Error::corrupt(path, "header"))?.map_err(io_at(path))?;
    let header: ManifestHeader =
        serde_json::from_str(&first).map_err(|e| Error::corrupt(path, format!("header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(Error::corrupt(path, format!("format {}", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(Error::corrupt(path, format!("version {}", header.version)));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::corrupt(path, format!("record {}: {e}", i + 1)))?);
    }
    if records.len() != header.records {
        return Err(Error::corrupt(path, format!("{} records, header says {}", records.len(), header.records)));
    }
    Ok(Manifest { version: header.version, config: header.config, records })
}

/// Directory name of a class, e.g. `stj_lfm`.
pub fn class_dir(class: CompoundClass) -> String {
    class.name().to_lowercase().replace('+', "_")
}

fn record_for(cfg: &GenerationConfig, class: CompoundClass, jnr_index: usize, jnr_db: f64, realization: usize) -> SampleRecord {
    let sample_id = format!("c{}_j{jnr_index:03}_r{realization:06}", class.label());
    let dir = class_dir(class);
    let stft = cfg.features.stft_for(class);
    SampleRecord {
        sample_id: sample_id.clone(),
        class_label: class.label(),
        class_name: class.name(),
        jnr_db,
        jnr_index,
        realization,
        pr_db: 0.0,
        sample_seed: sample_seed(cfg.master_seed, class.label(), jnr_index, realization),
        stft_window_len: stft.window_len,
        signal_path: cfg.write_signals.then(|| format!("{dir}/{sample_id}.iq")),
        tfi_path: cfg.write_features.then(|| format!("{dir}/{sample_id}.tfi.jlt")),
        psd_path: cfg.write_features.then(|| format!("{dir}/{sample_id}.psd.jlt")),
    }
}

/// Recreates the noisy signal of a record from its seed.
pub fn regenerate_signal(record: &SampleRecord, cfg: &GenerationConfig) -> Result<ComplexSignal> {
    let class = CompoundClass::from_label(record.class_label)
        .ok_or_else(|| Error::InvalidSpec(format!("label {}", record.class_label)))?;
    let mut rng = rng_from_seed(record.sample_seed);
    Ok(synthesize_sample(class, record.jnr_db, cfg.grid.pr_range_db, &cfg.clock, &mut rng)?.1)
}

fn expected_len(path: &Path, len: u64) -> bool {
    fs::metadata(path).map(|m| m.is_file() && m.len() == len).unwrap_or(false)
}

fn generate_cell(cfg: &GenerationConfig, out_dir: &Path, mut record: SampleRecord) -> Result<SampleRecord> {
    let class = CompoundClass::from_label(record.class_label).expect("grid validated");
    let mut rng = rng_from_seed(record.sample_seed);
    let (spec, signal) = synthesize_sample(class, record.jnr_db, cfg.grid.pr_range_db, &cfg.clock, &mut rng)?;
    record.pr_db = spec.power_ratio_db;
    let side = cfg.features.side as u64;
    let image_len = 6 + 16 + 4 * side * side;
    let done = |p: &Option<String>, len: u64| p.as_ref().is_none_or(|p| expected_len(&out_dir.join(p), len));
    // resume: payloads are written atomically, so a correctly sized file is complete
    if done(&record.signal_path, 8 * cfg.clock.num_samples as u64)
        && done(&record.tfi_path, image_len)
        && done(&record.psd_path, image_len)
    {
        return Ok(record);
    }
    if let Some(p) = &record.signal_path {
        write_signal(&out_dir.join(p), &signal)?;
    }
    if let (Some(t), Some(p)) = (&record.tfi_path, &record.psd_path) {
        let (tfi, psd) =
            featurize(&signal, &cfg.features.stft_with(record.stft_window_len), &cfg.features.welch, cfg.features.side)?;
        write_image(&out_dir.join(t), &tfi)?;
        write_image(&out_dir.join(p), &psd)?;
    }
    Ok(record)
}

/// Every grid cell in generation order: class, then JNR, then realization.
pub fn plan_records(cfg: &GenerationConfig) -> Result<Vec<SampleRecord>> {
    cfg.grid.validate()?;
    let levels = cfg.grid.jnr_levels();
    let mut out = Vec::with_capacity(cfg.grid.num_records());
    for &label in &cfg.grid.classes {
        let class = CompoundClass::from_label(label).expect("validated");
        for (j, &jnr) in levels.iter().enumerate() {
            for r in 0..cfg.grid.realizations {
                out.push(record_for(cfg, class, j, jnr, r));
            }
        }
    }
    Ok(out)
}

/// Synthesizes, featurizes and stores every grid cell under `out_dir`,
/// skipping cells whose payloads already exist, then writes the manifest.
/// `jobs` caps the worker count; output does not depend on it.
pub fn generate_dataset(cfg: &GenerationConfig, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    let planned = plan_records(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records = pool.install(|| {
        planned.into_par_iter().map(|r| generate_cell(cfg, out_dir, r)).collect::<Result<Vec<_>>>()
    })?;
    let manifest = Manifest { version: MANIFEST_VERSION, config: cfg.clone(), records };
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Feature images of a record computed from its stored 32-bit signal.
pub fn featurize_record(root: &Path, record: &SampleRecord, cfg: &GenerationConfig) -> Result<(FeatureImage, FeatureImage)> {
    let path = record
        .signal_path
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec(format!("record {} has no stored signal", record.sample_id)))?;
    let signal = read_signal(&root.join(path), cfg.clock)?;
    featurize(&signal, &cfg.features.stft_with(record.stft_window_len), &cfg.features.welch, cfg.features.side)
}

/// Stored feature images of a record.
pub fn load_record_images(root: &Path, record: &SampleRecord) -> Result<(FeatureImage, FeatureImage)> {
    match (&record.tfi_path, &record.psd_path) {
        (Some(t), Some(p)) => Ok((read_image(&root.join(t), ImageKind::Tfi)?, read_image(&root.join(p), ImageKind::Psd)?)),
        _ => Err(Error::InvalidSpec(format!("record {} has no stored features", record.sample_id))),
    }
}

/// Loads the stored features of every record into a training set.
pub fn load_features<T: Real>(root: &Path, manifest: &Manifest, jobs: usize) -> Result<crate::training::Dataset<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let images = pool.install(|| {
        manifest.records.par_iter().map(|r| load_record_images(root, r)).collect::<Result<Vec<_>>>()
    })?;
    let mut data = crate::training::Dataset::new(manifest.config.features.side);
    for (r, (tfi, psd)) in manifest.records.iter().zip(images) {
        data.push(&tfi.pixels, &psd.pixels, r.class_label, r.jnr_db)?;
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    dtype: u8,
    config: ModelConfig,
    entries: Vec<CheckpointEntry>,
}

pub fn checkpoint_bytes<T: Real>(model: &Skanet<T>) -> Result<Vec<u8>> {
    let store = &model.store;
    let entries: Vec<CheckpointEntry> = store
        .params()
        .iter()
        .map(|p| CheckpointEntry { name: p.name.clone(), kind: EntryKind::Param, shape: p.value.shape().to_vec() })
        .chain(store.buffers().iter().map(|b| CheckpointEntry {
            name: b.name.clone(),
            kind: EntryKind::Buffer,
            shape: b.value.shape().to_vec(),
        }))
        .collect();
    let header = CheckpointHeader { version: 1, dtype: T::DTYPE.code(), config: model.config().clone(), entries };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidSpec(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in store.params() {
        push_values(&mut out, p.value.data());
    }
    for b in store.buffers() {
        push_values(&mut out, b.value.data());
    }
    Ok(out)
}

/// Every parameter, every buffer and the model config.
pub fn save_checkpoint<T: Real>(model: &Skanet<T>, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Skanet<T>> {
    let mut file = fs::File::open(path).map_err(io_at(path))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_at(path))?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::corrupt(path, "magic"));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| Error::corrupt(path, "header length"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::corrupt(path, format!("header: {e}")))?;
    if header.dtype != T::DTYPE.code() {
        return Err(Error::corrupt(path, format!("dtype code {}, expected {}", header.dtype, T::DTYPE.code())));
    }
    let mut model = Skanet::<T>::new(header.config, 0).map_err(|e| Error::corrupt(path, format!("config: {e}")))?;
    let expected = model.store.params().len() + model.store.buffers().len();
    if header.entries.len() != expected {
        return Err(Error::corrupt(path, format!("{} entries, model has {expected}", header.entries.len())));
    }
    let mut offset = 12 + len;
    for e in &header.entries {
        let n: usize = e.shape.iter().product();
        let size = n * T::DTYPE.size();
        let chunk = bytes.get(offset..offset + size).ok_or_else(|| Error::corrupt(path, format!("payload of {}", e.name)))?;
        offset += size;
        let value = Tensor::new(e.shape.clone(), parse_values(chunk))?;
        let slot = match e.kind {
            EntryKind::Param => model.store.param_id(&e.name).map(|id| &mut model.store.param_mut(id).value),
            EntryKind::Buffer => model.store.buffer_id(&e.name).map(|id| &mut model.store.buffer_mut(id).value),
        };
        let slot = slot.ok_or_else(|| Error::corrupt(path, format!("unknown entry {}", e.name)))?;
        if slot.shape() != value.shape() {
            return Err(Error::corrupt(path, format!("shape of {}", e.name)));
        }
        *slot = value;
    }
    if offset != bytes.len() {
        return Err(Error::corrupt(path, "trailing bytes"));
    }
    Ok(model)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_at(path))?;
    f.write_all(text.as_bytes()).map_err(io_at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_arithmetic() {
        let g = GridConfig::default();
        assert_eq!(g.jnr_levels().len(), 41);
        assert_eq!(g.num_records(), 369_000);
    }

    #[test]
    fn desk_grid_arithmetic() {
        let g = GridConfig { jnr_min_db: 0.0, jnr_max_db: 10.0, jnr_step_db: 5.0, realizations: 50, ..Default::default() };
        assert_eq!(g.jnr_levels(), vec![0.0, 5.0, 10.0]);
        assert_eq!(g.num_records(), 1350);
    }

    #[test]
    fn tensor_bytes_layout() {
        let t = Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap();
        let b = tensor_bytes(&t);
        assert_eq!(&b[..4], b"JLT1");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[14..18].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn parse_rejects_each_header_field() {
        let p = Path::new("x");
        let good = tensor_bytes(&Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(parse_tensor::<f32>(p, &bad), Err(Error::Corrupt { field, .. }) if field == "magic"));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(parse_tensor::<f32>(p, &bad), Err(Error::Corrupt { field, .. }) if field.contains("dtype")));
        assert!(matches!(parse_tensor::<f64>(p, &good), Err(Error::Corrupt { field, .. }) if field.contains("dtype")));
        assert!(matches!(parse_tensor::<f32>(p, &good[..good.len() - 1]), Err(Error::Corrupt { field, .. }) if field.contains("payload")));
    }

    #[test]
    fn class_dirs() {
        assert_eq!(class_dir(CompoundClass::ALL[0]), "stj_lfm");
    }
}
