//! Model artifact directories.
//!
//! Layout:
//!
//! ```text
//! manifest.json       format version, config, input dims, schema hash, channel order, tensor index
//! <group>.weights     one per parameter group (meta, linguistic, bert, head)
//! schema.json         feature schema, when the model carries one
//! training_log.tsv    epoch, loss
//! ```
//!
//! A weights file is the 8-byte magic `CVAW0001`, a little-endian `u32`
//! record count, then per record: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, and the row-major values as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayViewD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{AdnnParams, InputDims};
use super::{AdnnConfig, EpochLog, ModelError, TrainedModel};
use crate::features::FeatureSchema;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_MAGIC: &[u8; 8] = b"CVAW0001";
const SCHEMA_FILE: &str = "schema.json";
const LOG_FILE: &str = "training_log.tsv";
const FORMAT: &str = "convact-adnn";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    crate_version: String,
    config: AdnnConfig,
    dims: InputDims,
    schema_hash: Option<String>,
    channel_order: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ModelError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn encode_weights(tensors: &[(String, ArrayViewD<'_, f64>)]) -> Vec<u8> {
    let mut out = WEIGHTS_MAGIC.to_vec();
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in t.iter() {
            out.extend((v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::CorruptArtifact(format!("{} is truncated", self.file)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

type Tensor = (Vec<usize>, Vec<f64>);

fn decode_weights(bytes: &[u8], file: &str) -> Result<BTreeMap<String, Tensor>, ModelError> {
    let corrupt = |msg: String| ModelError::CorruptArtifact(format!("{file}: {msg}"));
    let mut r = Reader { bytes, pos: 0, file };
    if r.take(8).ok() != Some(&WEIGHTS_MAGIC[..]) {
        return Err(corrupt("bad magic".into()));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(corrupt(format!("implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("shape overflows".into()))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("shape overflows".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.insert(name.to_string(), (shape, values));
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_model(model: &TrainedModel, dir: impl AsRef<Path>) -> Result<(), ModelError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let named = model.params.named();
    let mut groups: BTreeMap<&str, Vec<(String, ArrayViewD<'_, f64>)>> = BTreeMap::new();
    let mut tensors = Vec::new();
    for (name, t) in &named {
        let group = AdnnParams::group_of(name);
        tensors.push(TensorEntry {
            name: name.clone(),
            file: format!("{group}.weights"),
            shape: t.shape().to_vec(),
        });
        groups.entry(group).or_default().push((name.clone(), t.view()));
    }
    for (group, ts) in &groups {
        write_file(&dir.join(format!("{group}.weights")), &encode_weights(ts))?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: model.config.clone(),
        dims: model.dims,
        schema_hash: model.schema.as_ref().map(FeatureSchema::hash),
        channel_order: model.config.channels.channels().map(|c| c.name().to_string()).collect(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Io(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    if let Some(schema) = &model.schema {
        schema.save(dir.join(SCHEMA_FILE)).map_err(|e| ModelError::Io(e.to_string()))?;
    }
    let mut log = String::from("epoch\tloss\n");
    for e in &model.log {
        log.push_str(&format!("{}\t{}\n", e.epoch, e.loss));
    }
    write_file(&dir.join(LOG_FILE), log.as_bytes())
}

fn read_log(path: &Path) -> Result<Vec<EpochLog>, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let corrupt = || ModelError::CorruptArtifact(format!("{} is malformed", path.display()));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (epoch, loss) = l.split_once('\t').ok_or_else(corrupt)?;
            Ok(EpochLog {
                epoch: epoch.parse().map_err(|_| corrupt())?,
                loss: loss.parse().map_err(|_| corrupt())?,
            })
        })
        .collect()
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<TrainedModel, ModelError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ModelError::CorruptArtifact(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.format != FORMAT || manifest.format_version != FORMAT_VERSION {
        return Err(ModelError::IncompatibleVersion(format!(
            "artifact format {} v{}, expected {FORMAT} v{FORMAT_VERSION}",
            manifest.format, manifest.format_version
        )));
    }
    manifest.config.validate()?;

    let schema = match &manifest.schema_hash {
        Some(expected) => {
            let schema = FeatureSchema::load(dir.join(SCHEMA_FILE))
                .map_err(|e| ModelError::CorruptArtifact(format!("{SCHEMA_FILE}: {e}")))?;
            let actual = schema.hash();
            if &actual != expected {
                return Err(ModelError::IncompatibleVersion(format!(
                    "schema hash {actual} does not match manifest hash {expected}"
                )));
            }
            Some(schema)
        }
        None => None,
    };

    let mut params = AdnnParams::init(&manifest.config, manifest.dims, &mut ChaCha8Rng::seed_from_u64(0));
    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    let files: std::collections::BTreeSet<&str> = manifest.tensors.iter().map(|t| t.file.as_str()).collect();
    for file in files {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        stored.extend(decode_weights(&bytes, file)?);
    }
    let expected = params.named().len();
    if stored.len() != expected {
        return Err(ModelError::CorruptArtifact(format!(
            "found {} tensors, configuration needs {expected}",
            stored.len()
        )));
    }
    for (name, mut t) in params.named_mut() {
        let (shape, values) = stored
            .remove(&name)
            .ok_or_else(|| ModelError::CorruptArtifact(format!("tensor {name} missing")))?;
        if shape != t.shape() {
            return Err(ModelError::CorruptArtifact(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        let arr = ndarray::ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| ModelError::CorruptArtifact(e.to_string()))?;
        t.assign(&arr);
    }
    Ok(TrainedModel {
        config: manifest.config,
        dims: manifest.dims,
        params,
        schema,
        log: read_log(&dir.join(LOG_FILE))?,
    })
}

/// Loads a model and checks that it was trained under `schema`.
pub fn load_model_for(dir: impl AsRef<Path>, schema: &FeatureSchema) -> Result<TrainedModel, ModelError> {
    let model = load_model(dir)?;
    let expected = schema.hash();
    match model.schema.as_ref().map(FeatureSchema::hash) {
        Some(h) if h == expected => Ok(model),
        Some(h) => Err(ModelError::IncompatibleVersion(format!(
            "model schema hash {h} differs from {expected}"
        ))),
        None => Err(ModelError::IncompatibleVersion("model carries no feature schema".into())),
    }
}
