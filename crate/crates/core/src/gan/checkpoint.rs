//! Self-describing checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GISTCKPT"  u32 version
//! u64 meta_len  meta_len bytes of JSON metadata
//! u32 n_tensors
//! per tensor: u32 name_len, name (utf-8), u32 ndim, ndim x u64 dims, f64 data
//! ```
//!
//! Adam moments are not stored: a resumed run starts a fresh optimizer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::networks::{ArchConfig, Discriminator, Generator};
use super::{GanError, Hyperparameters, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"GISTCKPT";
const VERSION: u32 = 1;

/// Generator and discriminator state with training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCheckpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub images_seen: u64,
    /// `(kimg, fid)` pairs with strictly increasing kimg.
    pub fid_history: Vec<(f64, f64)>,
    pub hyperparameters: Hyperparameters,
    pub parent_checkpoint: Option<String>,
    /// Where this checkpoint was loaded from; not serialized.
    pub origin: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    arch: ArchConfig,
    images_seen: u64,
    fid_history: Vec<(f64, f64)>,
    hyperparameters: Hyperparameters,
    parent_checkpoint: Option<String>,
}

impl TrainingCheckpoint {
    pub fn arch(&self) -> ArchConfig {
        self.generator.arch()
    }

    pub fn resolution(&self) -> usize {
        self.arch().resolution
    }

    pub fn n_classes(&self) -> usize {
        self.arch().n_classes
    }

    pub fn kimg_seen(&self) -> f64 {
        self.images_seen as f64 / 1000.0
    }

    /// Identifier recorded as `parent_checkpoint` by runs resumed from this one.
    pub fn reference(&self) -> String {
        self.origin.clone().unwrap_or_else(|| format!("in-memory@{}", self.images_seen))
    }

    pub fn fid_values(&self) -> Vec<f64> {
        self.fid_history.iter().map(|&(_, f)| f).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            arch: self.arch(),
            images_seen: self.images_seen,
            fid_history: self.fid_history.clone(),
            hyperparameters: self.hyperparameters.clone(),
            parent_checkpoint: self.parent_checkpoint.clone(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        let tensors: Vec<(String, &Tensor)> =
            self.generator.named_params().into_iter().chain(self.discriminator.named_params()).collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        let mut tensors = HashMap::new();
        for _ in 0..r.u32()? {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("tensor name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)).is_some() {
                return Err(bad(&format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let arch = ArchConfig::new(
            meta.arch.resolution,
            meta.arch.n_classes,
            meta.arch.latent_dim,
            meta.arch.width,
            meta.arch.max_channels,
        )?;
        let (mut generator, mut discriminator) = super::networks::init_networks(arch, 0)?;
        fill(&mut tensors, generator.named_params().into_iter().map(|(n, _)| n).collect(), {
            use super::model::Synthesizer;
            generator.params_mut()
        })?;
        fill(&mut tensors, discriminator.named_params().into_iter().map(|(n, _)| n).collect(), {
            use super::model::Critic;
            discriminator.params_mut()
        })?;
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(&format!("unexpected tensor {extra}")));
        }
        if meta.fid_history.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(bad("fid_history kimg values are not increasing"));
        }
        Ok(Self {
            generator,
            discriminator,
            images_seen: meta.images_seen,
            fid_history: meta.fid_history,
            hyperparameters: meta.hyperparameters,
            parent_checkpoint: meta.parent_checkpoint,
            origin: None,
        })
    }

    /// Atomic write (temp file then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ck = Self::from_bytes(&std::fs::read(path)?)?;
        ck.origin = Some(path.display().to_string());
        Ok(ck)
    }
}

fn bad(msg: &str) -> GanError {
    GanError::Checkpoint(msg.to_string())
}

fn fill(tensors: &mut HashMap<String, Tensor>, names: Vec<String>, params: Vec<&mut Tensor>) -> Result<()> {
    for (name, p) in names.into_iter().zip(params) {
        let t = tensors.remove(&name).ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if t.shape() != p.shape() {
            return Err(bad(&format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), p.shape())));
        }
        *p = t;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
