//! Binary checkpoints for planner and generator models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "PLANGEN1"
//! hlen      u64      length of the JSON header in bytes
//! header    hlen     JSON: {format_version, module_kind, config, vocab, tensors: [{name, shape}], meta}
//! payload            every tensor's values as f64, in header order
//! ```

use std::fs;
use std::path::Path;

use plangen_core::generator::{GeneratorConfig, GeneratorModel};
use plangen_core::planner::{PlannerConfig, PlannerModel};
use plangen_core::tensor::{ParamStore, Tensor};
use plangen_core::vocab::{Vocab, BOS, EOS, PAD, SEP, UNK};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"PLANGEN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: &'static str, found: String },
    #[error("invalid model: {0}")]
    Model(#[from] plangen_core::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    module_kind: String,
    config: serde_json::Value,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn encode(kind: &str, config: serde_json::Value, vocab: &Vocab, params: &ParamStore, meta: serde_json::Value) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        module_kind: kind.into(),
        config,
        vocab: (0..vocab.len()).map(|i| vocab.token(i).to_string()).collect(),
        tensors: params.iter().map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() }).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8], expected: &'static str) -> Result<(serde_json::Value, Vocab, ParamStore, serde_json::Value), CheckpointError> {
    let bad = |m: &str| CheckpointError::Format(m.into());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported format version {}", header.format_version)));
    }
    if header.module_kind != expected {
        return Err(CheckpointError::Kind { expected, found: header.module_kind });
    }
    if header.vocab.len() < 5 || header.vocab[..5] != [PAD, BOS, EOS, UNK, SEP] {
        return Err(bad("vocabulary does not start with the reserved specials"));
    }
    let mut payload = &body[hlen..];
    let mut params = ParamStore::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if payload.len() < 8 * n {
            return Err(CheckpointError::Format(format!("truncated tensor {}", t.name)));
        }
        let data = payload[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        payload = &payload[8 * n..];
        params.add(&t.name, Tensor::from_vec(&t.shape, data)?);
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok((header.config, Vocab::from(header.vocab), params, header.meta))
}

fn config<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, CheckpointError> {
    serde_json::from_value(v).map_err(|e| CheckpointError::Format(format!("config: {e}")))
}

pub fn planner_to_bytes(model: &PlannerModel, meta: serde_json::Value) -> Vec<u8> {
    let cfg = serde_json::to_value(model.config()).expect("config serializes");
    encode("planner", cfg, model.vocab(), model.params(), meta)
}

pub fn planner_from_bytes(bytes: &[u8]) -> Result<PlannerModel, CheckpointError> {
    let (cfg, vocab, params, _) = decode(bytes, "planner")?;
    Ok(PlannerModel::from_parts(config::<PlannerConfig>(cfg)?, vocab, params)?)
}

pub fn generator_to_bytes(model: &GeneratorModel, meta: serde_json::Value) -> Vec<u8> {
    let cfg = serde_json::to_value(model.config()).expect("config serializes");
    encode("generator", cfg, model.vocab(), model.params(), meta)
}

pub fn generator_from_bytes(bytes: &[u8]) -> Result<GeneratorModel, CheckpointError> {
    let (cfg, vocab, params, _) = decode(bytes, "generator")?;
    Ok(GeneratorModel::from_parts(config::<GeneratorConfig>(cfg)?, vocab, params)?)
}

/// Writes through a temporary sibling file so readers never see a partial
/// checkpoint.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_planner(model: &PlannerModel, meta: serde_json::Value, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &planner_to_bytes(model, meta))
}

pub fn load_planner(path: &Path) -> Result<PlannerModel, CheckpointError> {
    planner_from_bytes(&fs::read(path)?)
}

pub fn save_generator(model: &GeneratorModel, meta: serde_json::Value, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &generator_to_bytes(model, meta))
}

pub fn load_generator(path: &Path) -> Result<GeneratorModel, CheckpointError> {
    generator_from_bytes(&fs::read(path)?)
}
