//! Checkpoint container.
//!
//! ```text
//! b"ADVC" | u32 format | u64 header_len | header JSON | raw f32 LE tensors
//! ```
//!
//! The header holds [`CheckpointMeta`] plus a tensor index of
//! `(name, shape, dtype, offset)` with offsets into the raw section.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, CodecModel};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADVC";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: String,
    pub config: CodecConfig,
    pub step: u64,
    pub seed: u64,
    /// Free-form provenance, e.g. `"origin": "adversarial_finetune"`.
    #[serde(default)]
    pub tags: std::collections::BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(config: CodecConfig, step: u64, seed: u64) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            config,
            step,
            seed,
            tags: Default::default(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// `{mode}_lambda{lambda}_{loss}_step{step}.ckpt`
pub fn checkpoint_file_name(config: &CodecConfig, step: u64) -> String {
    format!("{}_lambda{}_{}_step{step}.ckpt", config.mode, config.lambda, config.distortion)
}

pub fn encode_checkpoint(model: &CodecModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.config != *model.config() {
        return Err(Error::Checkpoint("metadata config differs from model config".into()));
    }
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
        });
        offset += 4 * t.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in model.params().iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CodecModel, CheckpointMeta)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let format = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format {format}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    let raw = &bytes[body..];
    let mut params = ParamStore::new();
    for e in header.tensors {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("`{}` has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let chunk = raw
            .get(start..start + 4 * n)
            .ok_or_else(|| Error::Checkpoint(format!("`{}` runs past end of file", e.name)))?;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.insert(e.name, Tensor::from_vec(&e.shape, data)?);
    }
    let model = CodecModel::from_parts(header.meta.config.clone(), params)?;
    Ok((model, header.meta))
}

/// Write via a temporary sibling and rename, so a failed save leaves nothing behind.
pub fn save_checkpoint(path: &Path, model: &CodecModel, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(CodecModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".partial");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
