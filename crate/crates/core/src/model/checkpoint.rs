//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "GZATCKPT"
//! version   u32
//! meta_len  u32, then meta_len bytes of JSON (kind, configs, history, layers)
//! count     u32, then per tensor:
//!           name_len u16, name (UTF-8), value count u64, values as f32
//! checksum  32 bytes SHA-256 of everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::EpochRecord;
use super::{BackboneConfig, ModelError, TrainConfig};
use crate::nn::{LayerSpec, Network, Shape};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GZATCKPT";
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gaze,
    Attention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub network: Network<f32>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: ModelKind,
    backbone: BackboneConfig,
    train: TrainConfig,
    history: Vec<EpochRecord>,
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    frozen: Vec<String>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let input = self.network.input_shape();
        let meta = Meta {
            kind: self.kind,
            backbone: self.backbone.clone(),
            train: self.train.clone(),
            history: self.history.clone(),
            input: [input.channels, input.height, input.width],
            layers: self.network.specs(),
            frozen: self.network.layers().iter().filter(|l| l.frozen).map(|l| l.name.clone()).collect(),
        };
        let meta = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
        let params = self.network.named_params();
        let mut out = Vec::with_capacity(64 + meta.len() + 4 * self.network.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, values) in params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |msg: &str| ModelError::CorruptCheckpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch { found: version, supported: CHECKPOINT_VERSION });
        }
        if bytes.len() < 12 + CHECKSUM_LEN {
            return Err(corrupt("truncated"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }

        let mut reader = Reader { bytes: body, pos: 12 };
        let meta_len = reader.u32()? as usize;
        let meta: Meta = serde_json::from_slice(reader.take(meta_len)?).map_err(|e| corrupt(&e.to_string()))?;
        let [c, h, w] = meta.input;
        let mut network = Network::<f32>::zeros(Shape::new(c, h, w), &meta.layers)?;
        let count = reader.u32()?;
        for _ in 0..count {
            let name_len = reader.u16()? as usize;
            let name = std::str::from_utf8(reader.take(name_len)?).map_err(|_| corrupt("tensor name"))?.to_string();
            let n = reader.u64()? as usize;
            let raw = reader.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor size"))?)?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            network.set_param(&name, &values)?;
        }
        if reader.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        for layer in network.layers_mut() {
            layer.frozen = meta.frozen.contains(&layer.name);
        }
        Ok(Self { kind: meta.kind, backbone: meta.backbone, train: meta.train, history: meta.history, network })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<(), ModelError> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })?;
    ModelCheckpoint::from_bytes(&bytes)
}
