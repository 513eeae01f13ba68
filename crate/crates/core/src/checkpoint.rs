//! Versioned binary container for named tensors plus a JSON metadata block.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  "LSVCCKPT"            8 bytes
//! version                      u32
//! meta_len, meta (JSON)        u64, bytes
//! n_tensors                    u64
//! per tensor:
//!   name_len, name (UTF-8)     u32, bytes
//!   dtype                      u8   (0 = f64)
//!   ndim, dims                 u32, u64 × ndim
//!   data                       f64 × prod(dims)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Config, GuidanceConfig};
use crate::error::{Result, SvcError};
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"LSVCCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Vae,
    Ldm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub version: u32,
    pub config: Config,
    pub config_hash: String,
    pub compat_hash: String,
    /// Optimiser steps completed.
    pub step: usize,
    pub loss_history: Vec<f64>,
    /// LDM only: multiplier applied to latents before diffusion.
    #[serde(default)]
    pub latent_scale: Option<f64>,
    #[serde(default)]
    pub guidance: Option<GuidanceConfig>,
    /// LDM only: fingerprint of the VAE weights it was trained against.
    #[serde(default)]
    pub vae_fingerprint: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: &Config) -> Self {
        Self {
            meta: CheckpointMeta {
                kind,
                version: FORMAT_VERSION,
                config: config.clone(),
                config_hash: config.hash(),
                compat_hash: config.compat_hash(),
                step: 0,
                loss_history: Vec::new(),
                latent_scale: None,
                guidance: None,
                vae_fingerprint: None,
            },
            tensors: BTreeMap::new(),
        }
    }

    /// Copies model parameters, keeping frozen flags out of the file.
    pub fn put_params(&mut self, params: &ParamStore) {
        for (n, t) in params.iter() {
            self.tensors.insert(n.clone(), t.clone());
        }
    }

    /// All tensors whose names do not start with `adam.`.
    pub fn params(&self) -> ParamStore {
        let mut p = ParamStore::new();
        for (n, t) in &self.tensors {
            if !n.starts_with("adam.") {
                p.insert(n.clone(), t.clone());
            }
        }
        p
    }

    pub fn optimizer_state(&self) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with("adam."))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(SvcError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(SvcError::Incompatible(format!(
                "checkpoint format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = read_u64(&mut r)? as usize;
        if meta_len > r.len() {
            return Err(SvcError::Checkpoint("truncated metadata".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&r[..meta_len])
            .map_err(|e| SvcError::Checkpoint(format!("metadata: {e}")))?;
        r = &r[meta_len..];
        let n = read_u64(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err(SvcError::Checkpoint("truncated tensor name".into()));
            }
            let name = std::str::from_utf8(&r[..name_len])
                .map_err(|_| SvcError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            r = &r[name_len..];
            let mut dtype = [0u8];
            read_exact(&mut r, &mut dtype)?;
            if dtype[0] != DTYPE_F64 {
                return Err(SvcError::Checkpoint(format!("unknown dtype {} for '{name}'", dtype[0])));
            }
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            if len.checked_mul(8).is_none_or(|b| b > r.len()) {
                return Err(SvcError::Checkpoint(format!("truncated data for '{name}'")));
            }
            let data = r[..len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[len * 8..];
            tensors.insert(name, Tensor::from_vec(&shape, data));
        }
        if !r.is_empty() {
            return Err(SvcError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { meta, tensors })
    }

    /// Writes atomically via a sibling temp file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Rejects a checkpoint of the wrong kind or trained under a config
    /// with a different compatibility hash.
    pub fn ensure_compatible(&self, kind: CheckpointKind, config: &Config) -> Result<()> {
        if self.meta.kind != kind {
            return Err(SvcError::Incompatible(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.meta.kind
            )));
        }
        let want = config.compat_hash();
        if self.meta.compat_hash != want {
            return Err(SvcError::Incompatible(format!(
                "checkpoint compat hash {} does not match config {}",
                short(&self.meta.compat_hash),
                short(&want)
            )));
        }
        Ok(())
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SvcError::Checkpoint("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
