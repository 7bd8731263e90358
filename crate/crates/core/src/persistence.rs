//! Binary model files.
//!
//! ```text
//! "NLIM" | version: u32 LE | header: compact JSON + '\n' | payload: f32 LE ... | crc32: u32 LE
//! ```
//!
//! The CRC covers header and payload. See `docs/model-format.md` for the
//! full layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Intent, Tag, CHAR_DIM, INTENT_DIM, TAG_DIM};
use crate::models::{ArchKind, ArchSpec, Model};
use crate::numcore::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"NLIM";
pub const FORMAT_VERSION: u32 = 1;
/// Magic, version and CRC.
pub const FIXED_BYTES: usize = 12;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("incomplete model: {0}")]
    IncompleteModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ArchKind,
    hidden: usize,
    char_dim: usize,
    tag_dim: usize,
    intent_dim: usize,
    tags: Vec<String>,
    intents: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn header_for(params: &ParamStore, arch: &ArchSpec) -> Header {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += 4 * t.len();
            e
        })
        .collect();
    Header {
        kind: arch.kind,
        hidden: arch.hidden,
        char_dim: CHAR_DIM,
        tag_dim: TAG_DIM,
        intent_dim: INTENT_DIM,
        tags: Tag::ALL.iter().map(|t| t.name().to_string()).collect(),
        intents: Intent::ALL.iter().map(|i| i.name().to_string()).collect(),
        tensors,
    }
}

/// Serializes a model. Values are rounded to f32.
pub fn encode_model(params: &ParamStore, arch: &ArchSpec) -> Result<Vec<u8>, PersistError> {
    if params.is_empty() {
        return Err(PersistError::IncompleteModel("no tensors".into()));
    }
    arch.check_params(params).map_err(|e| PersistError::IncompleteModel(e.to_string()))?;
    let header = serde_json::to_vec(&header_for(params, arch)).expect("header serializes");
    let mut out = Vec::with_capacity(FIXED_BYTES + header.len() + 1 + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header);
    out.push(b'\n');
    for (_, t) in params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(ParamStore, ArchSpec), PersistError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(PersistError::BadMagic);
    }
    if bytes.len() < FIXED_BYTES {
        return Err(PersistError::Malformed("truncated".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(PersistError::BadVersion(version));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PersistError::ChecksumMismatch { stored, computed });
    }
    let nl = body.iter().position(|&b| b == b'\n').ok_or_else(|| PersistError::Malformed("unterminated header".into()))?;
    let header: Header = serde_json::from_slice(&body[..nl]).map_err(|e| PersistError::Malformed(e.to_string()))?;
    check_vocab(&header)?;
    let payload = &body[nl + 1..];

    let arch = ArchSpec::new(header.kind, header.hidden);
    let mut params = ParamStore::new();
    let mut expected_offset = 0;
    for e in &header.tensors {
        if e.offset != expected_offset {
            return Err(PersistError::Malformed(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        let raw = payload.get(e.offset..end).ok_or_else(|| PersistError::Malformed(format!("tensor {} past end", e.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        let t = Tensor::from_vec(&e.shape, data).map_err(|err| PersistError::Malformed(err.to_string()))?;
        if params.contains(&e.name) {
            return Err(PersistError::Malformed(format!("duplicate tensor {}", e.name)));
        }
        params.insert(e.name.clone(), t);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(PersistError::Malformed(format!("{} trailing payload bytes", payload.len() - expected_offset)));
    }
    arch.check_params(&params).map_err(|e| PersistError::IncompleteModel(e.to_string()))?;
    Ok((params, arch))
}

fn check_vocab(h: &Header) -> Result<(), PersistError> {
    let tags: Vec<&str> = Tag::ALL.iter().map(|t| t.name()).collect();
    let intents: Vec<&str> = Intent::ALL.iter().map(|i| i.name()).collect();
    if h.tags != tags || h.tag_dim != TAG_DIM {
        return Err(PersistError::VocabMismatch(format!("file has {} tags, this build has {}", h.tags.len(), TAG_DIM)));
    }
    if h.intents != intents || h.intent_dim != INTENT_DIM {
        return Err(PersistError::VocabMismatch(format!("file has {} intents, this build has {}", h.intents.len(), INTENT_DIM)));
    }
    if h.char_dim != CHAR_DIM {
        return Err(PersistError::VocabMismatch(format!("file has {} characters, this build has {CHAR_DIM}", h.char_dim)));
    }
    Ok(())
}

/// Writes the model and returns the number of bytes written.
pub fn save_model(params: &ParamStore, arch: &ArchSpec, path: &Path) -> Result<usize, PersistError> {
    let bytes = encode_model(params, arch)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}

pub fn load_model(path: &Path) -> Result<(ParamStore, ArchSpec), PersistError> {
    decode_model(&fs::read(path)?)
}

impl Model {
    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let (params, arch) = load_model(path)?;
        Ok(Model { arch, params })
    }

    pub fn save(&self, path: &Path) -> Result<usize, PersistError> {
        save_model(&self.params, &self.arch, path)
    }

    /// CRC-32 of the encoded file, as hex.
    pub fn fingerprint(&self) -> String {
        match encode_model(&self.params, &self.arch) {
            Ok(bytes) => format!("{:08x}", crc32fast::hash(&bytes)),
            Err(_) => "invalid".into(),
        }
    }
}

/// Encoded size of a model without building the payload.
pub fn encoded_size(params: &ParamStore, arch: &ArchSpec) -> usize {
    let header = serde_json::to_vec(&header_for(params, arch)).expect("header serializes");
    FIXED_BYTES + header.len() + 1 + 4 * params.param_count()
}
