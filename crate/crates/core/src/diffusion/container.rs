//! Self-describing binary container for checkpoints and style tokens.
//!
//! Byte layout (all integers little-endian), documented in `docs/FORMATS.md`:
//!
//! ```text
//! 0        8 bytes   magic "MKUPCKPT"
//! 8        u32       format version (currently 1)
//! 12       u32       header length H
//! 16       H bytes   UTF-8 JSON header {kind, meta, tensors: [{name, shape}]}
//! 16+H     ...       tensor payload, f64 LE, tensors in header order
//! end-32   32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::params::ParamSet;
use crate::diffusion::schedule::{NoiseSchedule, ScheduleParams};
use crate::diffusion::toy::{ToyConfig, ToyDenoiser};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MKUPCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.payload_len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    fn payload_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("missing container magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if 16 + hlen > body.len() {
            return Err(Error::Corrupt("header length exceeds file".into()));
        }
        let header: Header = serde_json::from_slice(&body[16..16 + hlen])
            .map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;
        let mut payload = &body[16 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(Error::Corrupt(format!("tensor {} truncated", th.name)));
            }
            let (chunk, rest) = payload.split_at(n * 8);
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name: th.name,
                shape: th.shape,
                data,
            });
            payload = rest;
        }
        if !payload.is_empty() {
            return Err(Error::Corrupt("trailing payload bytes".into()));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Corrupt(format!(
                "expected a {kind} container, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Corrupt(format!("missing meta field {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Corrupt(format!("meta {key}: {e}")))
    }
}

/// Appends every tensor of `params` under `prefix`.
pub fn push_params(container: &mut Container, prefix: &str, params: &ParamSet) {
    for e in params.entries() {
        container.push(
            &format!("{prefix}{}", e.name),
            &e.shape,
            params.values()[e.offset..e.offset + e.len].to_vec(),
        );
    }
}

/// Fills `params` from tensors stored under `prefix`; names and shapes must match.
pub fn load_params(container: &Container, prefix: &str, params: &mut ParamSet) -> Result<()> {
    let mut values = params.values().to_vec();
    for e in params.entries() {
        let name = format!("{prefix}{}", e.name);
        let t = container
            .tensor(&name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
        if t.shape != e.shape {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape, e.shape
            )));
        }
        values[e.offset..e.offset + e.len].copy_from_slice(&t.data);
    }
    params.set_values(values)
}

#[derive(Serialize, Deserialize)]
struct ToyConfigRecord {
    latent_channels: usize,
    hidden: usize,
    embed_dim: usize,
    time_dim: usize,
    data_std: f64,
}

pub const PREDICTOR_KIND: &str = "predictor";
pub const SCHEMA_VERSION: u32 = 1;

/// Serializes the toy predictor with its schedule and weights.
pub fn predictor_container(net: &ToyDenoiser) -> Container {
    let cfg = net.config();
    let mut c = Container::new(
        PREDICTOR_KIND,
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "seed": net.seed(),
            "schedule": crate::diffusion::NoisePredictor::schedule(net).params(),
            "config": ToyConfigRecord {
                latent_channels: cfg.latent_channels,
                hidden: cfg.hidden,
                embed_dim: cfg.embed_dim,
                time_dim: cfg.time_dim,
                data_std: cfg.data_std,
            },
        }),
    );
    push_params(&mut c, "", net.params());
    c
}

pub fn predictor_from_container(c: &Container) -> Result<ToyDenoiser> {
    c.expect_kind(PREDICTOR_KIND)?;
    let schema: u32 = c.meta_field("schema_version")?;
    if schema != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: schema,
            supported: SCHEMA_VERSION,
        });
    }
    let seed: u64 = c.meta_field("seed")?;
    let schedule: ScheduleParams = c.meta_field("schedule")?;
    let cfg: ToyConfigRecord = c.meta_field("config")?;
    let config = ToyConfig {
        latent_channels: cfg.latent_channels,
        hidden: cfg.hidden,
        embed_dim: cfg.embed_dim,
        time_dim: cfg.time_dim,
        data_std: cfg.data_std,
    };
    let mut net = ToyDenoiser::new(config, NoiseSchedule::from_params(schedule)?, seed);
    load_params(c, "", net.params_mut())?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::toy::toy_backend;
    use crate::diffusion::NoisePredictor;

    #[test]
    fn predictor_round_trip_is_bit_exact() {
        let net = toy_backend(42, 4).unwrap().predictor;
        let bytes = predictor_container(&net).to_bytes();
        let back = predictor_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.params().values(), net.params().values());
        assert_eq!(back.seed(), 42);
        assert_eq!(back.schedule(), net.schedule());
    }

    #[test]
    fn detects_corruption_and_version() {
        let net = toy_backend(1, 4).unwrap().predictor;
        let mut bytes = predictor_container(&net).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Corrupt(_))));

        let mut bytes = predictor_container(&net).to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        assert!(Container::from_bytes(b"short").is_err());
    }

    #[test]
    fn layout_starts_with_magic_version_and_header() {
        let mut c = Container::new("x", serde_json::json!({}));
        c.push("a", &[2], vec![1.0, -2.0]);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload = &bytes[16 + h..16 + h + 16];
        assert_eq!(f64::from_le_bytes(payload[..8].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 16 + h + 16 + 32);
    }
}
