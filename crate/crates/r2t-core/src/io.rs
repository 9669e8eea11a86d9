//! Bit-exact file formats: datasets, named-tensor weights, checkpoints,
//! history CSVs, and the canonical-JSON run manifest.
//!
//! All payloads are little-endian f32. Writers stream to a temporary file in
//! the destination directory and rename on success, so readers never observe
//! partial output; readers verify magic, version, and exact byte size.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::{INPUT_CHANNELS, PHYS_CHANNELS};
use crate::symbolic::{SymbolicParams, PARAM_COUNT, SEQ_LEN};
use crate::synth::{GenConfig, SequenceSet};

const DATASET_MAGIC: &[u8; 4] = b"R2TD";
const WEIGHTS_MAGIC: &[u8; 4] = b"R2TW";
const CHECKPOINT_MAGIC: &[u8; 4] = b"R2TC";
const FORMAT_VERSION: u32 = 1;
const RECORD_LAYOUT_ID: u32 = 1;

/// f32 values per dataset record: 9 params + 5×96 input + 3×96 target.
pub const RECORD_VALUES: usize = PARAM_COUNT + INPUT_CHANNELS * SEQ_LEN + PHYS_CHANNELS * SEQ_LEN;

/// Bytes per dataset record.
pub const RECORD_BYTES: usize = RECORD_VALUES * 4;

/// Dataset header size in bytes: magic + version + count + layout id.
pub const DATASET_HEADER_BYTES: u64 = 4 + 4 + 8 + 4;

/// Exact file size implied by a record count.
pub fn dataset_file_size(count: u64) -> u64 {
    DATASET_HEADER_BYTES + count * RECORD_BYTES as u64
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write bytes atomically via a temp file + rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex_string(&h.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of a written dataset file.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub count: u64,
    pub bytes: u64,
    pub sha256: String,
}

/// Streaming dataset writer; the record count is declared up front and
/// verified at finish.
pub struct DatasetWriter {
    out: BufWriter<File>,
    hasher: Sha256,
    tmp: PathBuf,
    path: PathBuf,
    declared: u64,
    written: u64,
    bytes: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, count: u64) -> Result<Self> {
        let tmp = tmp_path(path);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            hasher: Sha256::new(),
            tmp,
            path: path.to_path_buf(),
            declared: count,
            written: 0,
            bytes: 0,
        };
        w.emit(DATASET_MAGIC)?;
        w.emit(&FORMAT_VERSION.to_le_bytes())?;
        w.emit(&count.to_le_bytes())?;
        w.emit(&RECORD_LAYOUT_ID.to_le_bytes())?;
        Ok(w)
    }

    fn emit(&mut self, bytes: &[u8]) -> Result<()> {
        self.out
            .write_all(bytes)
            .map_err(|e| Error::io(&self.tmp, e))?;
        self.hasher.update(bytes);
        self.bytes += bytes.len() as u64;
        Ok(())
    }

    pub fn write_record(&mut self, set: &SequenceSet) -> Result<()> {
        if self.written == self.declared {
            return Err(Error::InvalidInput(format!(
                "dataset writer declared {} records",
                self.declared
            )));
        }
        let mut buf = Vec::with_capacity(RECORD_BYTES);
        for v in set.true_params.to_array() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        debug_assert_eq!(set.input.len(), INPUT_CHANNELS * SEQ_LEN);
        debug_assert_eq!(set.target.len(), PHYS_CHANNELS * SEQ_LEN);
        for &v in set.input.iter().chain(set.target.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.emit(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetStats> {
        if self.written != self.declared {
            return Err(Error::InvalidInput(format!(
                "dataset writer wrote {} of {} declared records",
                self.written, self.declared
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        drop(self.out);
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(DatasetStats {
            count: self.written,
            bytes: self.bytes,
            sha256: hex_string(&self.hasher.finalize()),
        })
    }
}

/// Generate `n` sequences from `config` with `seed` and stream them to
/// `path` in index order (generation runs in parallel block by block).
pub fn write_dataset(path: &Path, n: u64, config: &GenConfig, seed: u64) -> Result<DatasetStats> {
    config.validate()?;
    let mut writer = DatasetWriter::create(path, n)?;
    const BLOCK: u64 = 1024;
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        for set in crate::synth::generate_block(seed, start..end, config)? {
            writer.write_record(&set)?;
        }
        start = end;
    }
    writer.finish()
}

/// An in-memory dataset.
pub struct Dataset {
    pub records: Vec<SequenceSet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Read and validate a dataset file.
    pub fn read(path: &Path) -> Result<Self> {
        let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
        let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::format(path, "bad magic, not a dataset file"));
        }
        let version = read_u32(&mut f, path)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported dataset version {version}"),
            ));
        }
        let count = read_u64(&mut f, path)?;
        let layout = read_u32(&mut f, path)?;
        if layout != RECORD_LAYOUT_ID {
            return Err(Error::format(path, format!("unknown record layout {layout}")));
        }
        if meta.len() != dataset_file_size(count) {
            return Err(Error::format(
                path,
                format!(
                    "size mismatch: header declares {count} records ({} bytes), file has {}",
                    dataset_file_size(count),
                    meta.len()
                ),
            ));
        }
        let mut records = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; RECORD_BYTES];
        for _ in 0..count {
            f.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let vals: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let mut raw = [0.0f64; PARAM_COUNT];
            for i in 0..PARAM_COUNT {
                raw[i] = vals[i] as f64;
            }
            let true_params = SymbolicParams::from_array(&raw)
                .map_err(|e| Error::format(path, format!("invalid stored parameters: {e}")))?;
            let input = vals[PARAM_COUNT..PARAM_COUNT + INPUT_CHANNELS * SEQ_LEN].to_vec();
            let target = vals[PARAM_COUNT + INPUT_CHANNELS * SEQ_LEN..].to_vec();
            records.push(SequenceSet {
                true_params,
                input,
                target,
            });
        }
        Ok(Self { records })
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(f64::from_le_bytes(b))
}

/// A named tensor flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn write_tensor_block(buf: &mut Vec<u8>, tensors: &[NamedTensor]) {
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += t.data.len() as u64;
    }
    buf.extend_from_slice(&offset.to_le_bytes());
    for t in tensors {
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_tensor_block(r: &mut impl Read, path: &Path) -> Result<Vec<NamedTensor>> {
    let count = read_u32(r, path)? as usize;
    if count > 4096 {
        return Err(Error::format(path, format!("implausible tensor count {count}")));
    }
    let mut dirs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nb = [0u8; 2];
        r.read_exact(&mut nb).map_err(|e| Error::io(path, e))?;
        let name_len = u16::from_le_bytes(nb) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(|e| Error::io(path, e))?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u64(r, path)? as usize);
        }
        let offset = read_u64(r, path)?;
        dirs.push((name, shape, offset));
    }
    let total = read_u64(r, path)? as usize;
    let mut expected_offset = 0u64;
    for (name, shape, offset) in &dirs {
        if *offset != expected_offset {
            return Err(Error::format(
                path,
                format!("tensor {name} has inconsistent offset {offset}"),
            ));
        }
        expected_offset += shape.iter().product::<usize>() as u64;
    }
    if expected_offset != total as u64 {
        return Err(Error::format(path, "tensor payload length mismatch"));
    }
    let mut payload = vec![0u8; total * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut tensors = Vec::with_capacity(count);
    for (name, shape, offset) in dirs {
        let len: usize = shape.iter().product();
        let start = offset as usize;
        tensors.push(NamedTensor {
            name,
            shape,
            data: values[start..start + len].to_vec(),
        });
    }
    Ok(tensors)
}

/// Save named tensors as a weights file.
pub fn save_weights(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_tensor_block(&mut buf, tensors);
    atomic_write(path, &buf)
}

/// Load a weights file.
pub fn load_weights(path: &Path) -> Result<Vec<NamedTensor>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::format(path, "bad magic, not a weights file"));
    }
    let version = read_u32(&mut f, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported weights version {version}"),
        ));
    }
    let tensors = read_tensor_block(&mut f, path)?;
    // no trailing garbage
    let mut rest = Vec::new();
    f.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", rest.len()),
        ));
    }
    let _ = meta;
    Ok(tensors)
}

/// Optimizer/trainer state snapshot for resumable training.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    /// Epochs fully completed when the snapshot was taken.
    pub epoch: u64,
    /// Optimizer steps taken (drives bias correction).
    pub adam_step: u64,
    pub best_epoch: u64,
    pub best_val_loss: f64,
    pub weights: Vec<NamedTensor>,
    pub adam_m: Vec<NamedTensor>,
    pub adam_v: Vec<NamedTensor>,
    pub best_weights: Vec<NamedTensor>,
}

/// Save a training checkpoint.
pub fn save_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&data.epoch.to_le_bytes());
    buf.extend_from_slice(&data.adam_step.to_le_bytes());
    buf.extend_from_slice(&data.best_epoch.to_le_bytes());
    buf.extend_from_slice(&data.best_val_loss.to_le_bytes());
    for block in [&data.weights, &data.adam_m, &data.adam_v, &data.best_weights] {
        write_tensor_block(&mut buf, block);
    }
    atomic_write(path, &buf)
}

/// Load a training checkpoint; truncated files yield a format error and no
/// partial state.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut f, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let epoch = read_u64(&mut f, path)?;
    let adam_step = read_u64(&mut f, path)?;
    let best_epoch = read_u64(&mut f, path)?;
    let best_val_loss = read_f64(&mut f, path)?;
    let weights = read_tensor_block(&mut f, path)?;
    let adam_m = read_tensor_block(&mut f, path)?;
    let adam_v = read_tensor_block(&mut f, path)?;
    let best_weights = read_tensor_block(&mut f, path)?;
    Ok(CheckpointData {
        epoch,
        adam_step,
        best_epoch,
        best_val_loss,
        weights,
        adam_m,
        adam_v,
        best_weights,
    })
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

/// Training history; `best_epoch` indexes the epoch with minimum validation
/// loss.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Write history as CSV. Float formatting is deterministic, so identical
/// histories produce identical bytes.
pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,lr,wall_time_s\n");
    for e in &history.epochs {
        s.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.3}\n",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.wall_time_s
        ));
    }
    atomic_write(path, s.as_bytes())
}

/// Read a history CSV written by [`write_history`].
pub fn read_history(path: &Path) -> Result<Vec<EpochStats>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| -> Result<f64> {
            fields
                .next()
                .ok_or_else(|| Error::format(path, format!("missing {what} on line {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("bad {what} on line {i}: {e}")))
        };
        out.push(EpochStats {
            epoch: next("epoch")? as usize,
            train_loss: next("train_loss")?,
            val_loss: next("val_loss")?,
            lr: next("lr")?,
            wall_time_s: next("wall_time_s")?,
        });
    }
    Ok(out)
}

/// The reproducibility record written next to every command's outputs.
/// Serialized as canonical JSON (sorted keys) so hashes are stable.
#[derive(Debug, Clone, Serialize, Default)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub dataset_hashes: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    /// Unix seconds; omitted in reproducible mode so outputs are byte-stable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<BTreeMap<String, u64>>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            ..Self::default()
        }
    }

    /// Canonical JSON: object keys sorted, stable float formatting.
    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)
            .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
        serde_json::to_string_pretty(&value)
            .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_canonical_json()?;
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn dataset_round_trip_and_size() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.r2td");
        let config = GenConfig::default();
        let stats = write_dataset(&path, 16, &config, 99).unwrap();
        assert_eq!(stats.count, 16);
        assert_eq!(stats.bytes, dataset_file_size(16));
        assert_eq!(std::fs::metadata(&path).unwrap().len(), dataset_file_size(16));
        let ds = Dataset::read(&path).unwrap();
        assert_eq!(ds.len(), 16);
        let direct = crate::synth::generate_sequence(99, 3, &config).unwrap();
        assert_eq!(ds.records[3].input, direct.input);
        assert_eq!(ds.records[3].target, direct.target);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.r2td");
        let stats = write_dataset(&path, 0, &GenConfig::default(), 1).unwrap();
        assert_eq!(stats.bytes, DATASET_HEADER_BYTES);
        let ds = Dataset::read(&path).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn dataset_generation_is_byte_identical() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.r2td");
        let b = dir.path().join("b.r2td");
        let config = GenConfig::default();
        let sa = write_dataset(&a, 32, &config, 7).unwrap();
        let sb = write_dataset(&b, 32, &config, 7).unwrap();
        assert_eq!(sa.sha256, sb.sha256);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.r2td");
        write_dataset(&path, 4, &GenConfig::default(), 5).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Dataset::read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.r2td");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(Dataset::read(&path), Err(Error::Format { .. })));
    }

    fn sample_tensors() -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "a".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 3.25, 0.0, 5.5, -0.125],
            },
            NamedTensor {
                name: "b".into(),
                shape: vec![4],
                data: vec![9.0, 8.0, 7.0, 6.0],
            },
        ]
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.r2tw");
        let tensors = sample_tensors();
        save_weights(&path, &tensors).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(tensors, loaded);
        // second save of the loaded tensors is byte-identical
        let path2 = dir.path().join("w2.r2tw");
        save_weights(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_structured_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.r2tc");
        let data = CheckpointData {
            epoch: 3,
            adam_step: 42,
            best_epoch: 2,
            best_val_loss: 0.5,
            weights: sample_tensors(),
            adam_m: sample_tensors(),
            adam_v: sample_tensors(),
            best_weights: sample_tensors(),
        };
        save_checkpoint(&path, &data).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.adam_step, 42);
        assert_eq!(loaded.weights, data.weights);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn history_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let history = TrainHistory {
            epochs: vec![
                EpochStats {
                    epoch: 0,
                    train_loss: 0.5,
                    val_loss: 0.25,
                    lr: 1e-3,
                    wall_time_s: 0.0,
                },
                EpochStats {
                    epoch: 1,
                    train_loss: 0.125,
                    val_loss: 0.0625,
                    lr: 9e-4,
                    wall_time_s: 0.0,
                },
            ],
            best_epoch: 1,
        };
        write_history(&path, &history).unwrap();
        let rows = read_history(&path).unwrap();
        assert_eq!(rows, history.epochs);
    }

    #[test]
    fn manifest_keys_are_sorted() {
        let mut m = RunManifest::new("gen");
        m.metrics.insert("zeta".into(), 1.0);
        m.metrics.insert("alpha".into(), 2.0);
        m.seeds.insert("dataset".into(), 9);
        let json = m.to_canonical_json().unwrap();
        let alpha = json.find("\"alpha\"").unwrap();
        let zeta = json.find("\"zeta\"").unwrap();
        assert!(alpha < zeta);
        let cmd = json.find("\"command\"").unwrap();
        let cfg = json.find("\"config\"").unwrap();
        assert!(cmd < cfg, "top-level keys must be sorted");
        assert!(!json.contains("timestamps"));
    }
}
