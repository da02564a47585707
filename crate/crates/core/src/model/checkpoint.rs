//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "STADCKPT"
//! version    u32
//! meta_len   u64, then meta_len bytes of UTF-8 JSON (config echo + model spec)
//! seed       u64
//! dims       u64 feature_dim, u64 out_dim
//! params     u64 count, then count x f64
//! optimizer  u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps, f64 weight_decay,
//!            then count x f64 first moments, count x f64 second moments
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::ToyHead;
use super::optim::{AdamW, AdamWConfig};
use super::{Detector, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    artifact_version: String,
    spec: ModelSpec,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration, stored verbatim.
    pub config: serde_json::Value,
    pub artifact_version: String,
    pub seed: u64,
    pub detector: Detector,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value, seed: u64, detector: Detector, optimizer: AdamW) -> Self {
        Checkpoint {
            config,
            artifact_version: crate::VERSION.to_string(),
            seed,
            detector,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Meta {
            artifact_version: self.artifact_version.clone(),
            spec: self.detector.spec.clone(),
            config: self.config.clone(),
        })?;
        let head = &self.detector.head;
        let params = head.params();
        let opt = &self.optimizer;
        let mut out = Vec::with_capacity(64 + meta.len() + 24 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(head.feature_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(head.out_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        params
            .iter()
            .for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
        out.extend_from_slice(&opt.step.to_le_bytes());
        let c = opt.config;
        for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        opt.m
            .iter()
            .for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
        opt.v
            .iter()
            .for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        let seed = r.u64()?;
        let feature_dim = r.u64()? as usize;
        let out_dim = r.u64()? as usize;
        let count = r.u64()? as usize;

        let spec = meta.spec;
        spec.validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let shape = spec.shape();
        if feature_dim != spec.feature_dim() || out_dim != shape.anchors * shape.channels() {
            return Err(Error::Checkpoint(format!(
                "dimensions {feature_dim}x{out_dim} disagree with model spec"
            )));
        }
        let params = r.f64s(count)?;
        let head = ToyHead::from_params(feature_dim, shape, params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let step = r.u64()?;
        let cfg = r.f64s(5)?;
        let config = AdamWConfig {
            lr: cfg[0],
            beta1: cfg[1],
            beta2: cfg[2],
            eps: cfg[3],
            weight_decay: cfg[4],
        };
        let m = r.f64s(count)?;
        let v = r.f64s(count)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config: meta.config,
            artifact_version: meta.artifact_version,
            seed,
            detector: Detector { spec, head },
            optimizer: AdamW { config, step, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
