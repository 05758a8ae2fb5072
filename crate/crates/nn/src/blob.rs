//! Binary parameter blobs: an 8-byte magic, a little-endian u64 header
//! length, a JSON header, then every value as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::models::{CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, ModelConfig, SegModel};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Param, ParamSet};

const MAGIC: &[u8; 8] = b"WDNNBLOB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_blob(path: &Path, header: &BlobHeader, values: impl Iterator<Item = f64>) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| NnError::Blob(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_blob(path: &Path) -> Result<(BlobHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(NnError::Blob(format!("{} is not a parameter blob", path.display())));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| NnError::Blob("truncated header".into()))?;
    let header: BlobHeader = serde_json::from_slice(body).map_err(|e| NnError::Blob(e.to_string()))?;
    let payload = &bytes[16 + hlen..];
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 8 {
        return Err(NnError::Blob(format!(
            "{} payload bytes, expected {}",
            payload.len(),
            expected * 8
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Reads only the header (kind and config) of a blob.
pub fn read_header(path: &Path) -> Result<BlobHeader> {
    Ok(read_blob(path)?.0)
}

fn header_for(kind: &str, config: &impl Serialize, ps: &ParamSet) -> Result<BlobHeader> {
    Ok(BlobHeader {
        kind: kind.to_string(),
        config: serde_json::to_value(config).map_err(|e| NnError::Blob(e.to_string()))?,
        tensors: ps
            .params()
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    })
}

fn split(header: &BlobHeader, values: Vec<f64>) -> Vec<Param> {
    let mut it = values.into_iter();
    header
        .tensors
        .iter()
        .map(|t| Param {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: it.by_ref().take(t.shape.iter().product()).collect(),
        })
        .collect()
}

fn load_kind<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, ParamSet)> {
    let (header, values) = read_blob(path)?;
    if header.kind != kind {
        return Err(NnError::Blob(format!("{} holds a {}, expected a {kind}", path.display(), header.kind)));
    }
    let config = serde_json::from_value(header.config.clone()).map_err(|e| NnError::Blob(e.to_string()))?;
    Ok((config, ParamSet::from_params(split(&header, values))))
}

fn flat(ps: &ParamSet) -> impl Iterator<Item = f64> + '_ {
    ps.params().iter().flat_map(|p| p.data.iter().copied())
}

/// Save / load with a bit-exact round trip.
pub trait Persist: Sized {
    fn save(&self, path: &Path) -> Result<()>;
    fn load(path: &Path) -> Result<Self>;
}

impl Persist for SegModel {
    fn save(&self, path: &Path) -> Result<()> {
        write_blob(path, &header_for("segmenter", self.config(), self.params())?, flat(self.params()))
    }

    fn load(path: &Path) -> Result<Self> {
        let (config, ps): (ModelConfig, _) = load_kind(path, "segmenter")?;
        SegModel::from_parts(config, ps)
    }
}

impl Persist for FeatureExtractor {
    fn save(&self, path: &Path) -> Result<()> {
        write_blob(path, &header_for("extractor", self.config(), self.params())?, flat(self.params()))
    }

    fn load(path: &Path) -> Result<Self> {
        let (config, ps): (FeatureConfig, _) = load_kind(path, "extractor")?;
        FeatureExtractor::from_parts(config, ps)
    }
}

impl Persist for Discriminator {
    fn save(&self, path: &Path) -> Result<()> {
        write_blob(path, &header_for("critic", self.config(), self.params())?, flat(self.params()))
    }

    fn load(path: &Path) -> Result<Self> {
        let (config, ps): (CriticConfig, _) = load_kind(path, "critic")?;
        Discriminator::from_parts(config, ps)
    }
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    t: u64,
}

impl Persist for Adam {
    fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .m
            .iter()
            .enumerate()
            .map(|(i, m)| TensorInfo {
                name: format!("m{i}"),
                shape: vec![m.len()],
            })
            .chain(self.v.iter().enumerate().map(|(i, v)| TensorInfo {
                name: format!("v{i}"),
                shape: vec![v.len()],
            }))
            .collect();
        let header = BlobHeader {
            kind: "adam".into(),
            config: serde_json::to_value(AdamMeta {
                config: self.config,
                t: self.t,
            })
            .map_err(|e| NnError::Blob(e.to_string()))?,
            tensors,
        };
        write_blob(path, &header, self.m.iter().chain(&self.v).flatten().copied())
    }

    fn load(path: &Path) -> Result<Self> {
        let (meta, ps): (AdamMeta, ParamSet) = load_kind(path, "adam")?;
        let mut parts: Vec<Vec<f64>> = ps.params().iter().map(|p| p.data.clone()).collect();
        if parts.len() % 2 != 0 {
            return Err(NnError::Blob("optimizer blob must hold moment pairs".into()));
        }
        let v = parts.split_off(parts.len() / 2);
        Ok(Adam {
            config: meta.config,
            t: meta.t,
            m: parts,
            v,
        })
    }
}
