//! Binary checkpoint container:
//!
//! ```text
//! magic "SPARCKPT" | format_version u32 LE | header_len u64 LE | header JSON | payload
//! ```
//!
//! The header lists every tensor's name and shape plus the metadata block
//! and a SHA-256 of the payload. The payload is each tensor's row-major
//! data as little-endian f64, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spar_core::learn::{HyperParams, Method};
use spar_core::net::{NetConfig, NetParams, Tensor};

use super::{read, sha256_hex, write};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPARCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub checkpoint_id: Option<usize>,
    /// Episode index the snapshot was taken after.
    pub episode: Option<usize>,
    /// `None` for the novice.
    pub method: Option<Method>,
    pub hyper: Option<HyperParams>,
    pub creation_seed: u64,
}

impl CheckpointMeta {
    pub fn novice(seed: u64) -> Self {
        Self {
            checkpoint_id: None,
            episode: None,
            method: None,
            hyper: None,
            creation_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: NetConfig,
    frozen_encoder: bool,
    init_seed: u64,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

impl Checkpoint {
    pub fn new(params: NetParams, meta: CheckpointMeta) -> Self {
        Self { params, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.to_tensors();
        let mut payload = Vec::with_capacity(tensors.iter().map(|t| t.data.len() * 8).sum());
        for t in &tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.params.config,
            frozen_encoder: self.params.frozen_encoder,
            init_seed: self.params.init_seed,
            meta: self.meta.clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            payload_sha256: sha256_hex(&payload),
        };
        let header = serde_json::to_vec(&header).expect("in-memory serialization");
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing SPARCKPT magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(&format!(
                "format_version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end]).map_err(Error::json(path))?;
        if header.format_version != version {
            return Err(bad("header and prefix versions disagree"));
        }
        let payload = &bytes[header_end..];
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad(&format!("payload too short for {}", entry.name)));
            }
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if values.next().is_some() || !payload.len().is_multiple_of(8) {
            return Err(bad("trailing payload bytes"));
        }
        let params = NetParams::from_tensors(header.config, header.frozen_encoder, header.init_seed, &tensors)?;
        Ok(Self {
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?, path)
    }
}
