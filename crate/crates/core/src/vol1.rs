//! The `VOL1` on-disk format: a JSON header `<name>.json` next to a raw
//! little-endian payload `<name>.raw` in z-major order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Volume, VolumeData, VolumeError, VolumeKind};

pub const MAGIC: &str = "VOL1";

#[derive(Debug, Error)]
pub enum Vol1Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header {path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad magic {found:?} in {path}, expected \"VOL1\"")]
    BadMagic { path: PathBuf, found: String },
    #[error("header declares dtype {dtype} which kind {kind} does not use")]
    DtypeMismatch { kind: &'static str, dtype: String },
    #[error("payload {path} holds {actual_bytes} bytes but dims {dims:?} of 4-byte scalars need {expected_bytes}")]
    LengthMismatch {
        path: PathBuf,
        dims: [usize; 3],
        expected_bytes: usize,
        actual_bytes: usize,
    },
    #[error("invalid volume contents: {0}")]
    Invalid(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vol1Header {
    pub magic: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub kind: VolumeKind,
    pub dtype: String,
}

/// Header and payload paths for a volume base name. A trailing `.json` or
/// `.raw` on `base` is ignored.
pub fn paths_for(base: &Path) -> (PathBuf, PathBuf) {
    let s = base.to_string_lossy();
    let stem = s
        .strip_suffix(".json")
        .or_else(|| s.strip_suffix(".raw"))
        .unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}.json")),
        PathBuf::from(format!("{stem}.raw")),
    )
}

/// Little-endian payload bytes for a volume.
pub fn encode_payload(v: &Volume) -> Vec<u8> {
    match v.data() {
        VolumeData::F32(d) => d.iter().flat_map(|x| x.to_le_bytes()).collect(),
        VolumeData::I32(d) => d.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

pub fn save_volume(v: &Volume, base: &Path) -> Result<(), Vol1Error> {
    let (header_path, raw_path) = paths_for(base);
    let header = Vol1Header {
        magic: MAGIC.to_string(),
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        kind: v.kind(),
        dtype: v.kind().dtype().to_string(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|source| Vol1Error::Header {
        path: header_path.clone(),
        source,
    })?;
    fs::write(&header_path, json).map_err(|source| Vol1Error::Io {
        path: header_path.clone(),
        source,
    })?;
    fs::write(&raw_path, encode_payload(v)).map_err(|source| Vol1Error::Io {
        path: raw_path.clone(),
        source,
    })?;
    Ok(())
}

pub fn load_volume(base: &Path) -> Result<Volume, Vol1Error> {
    let (header_path, raw_path) = paths_for(base);
    let text = fs::read_to_string(&header_path).map_err(|source| Vol1Error::Io {
        path: header_path.clone(),
        source,
    })?;
    // Check the magic before the full schema so a foreign JSON file reports
    // the more useful error.
    let loose: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| Vol1Error::Header {
            path: header_path.clone(),
            source,
        })?;
    let found = loose.get("magic").and_then(|m| m.as_str()).unwrap_or("");
    if found != MAGIC {
        return Err(Vol1Error::BadMagic {
            path: header_path,
            found: found.to_string(),
        });
    }
    let header: Vol1Header =
        serde_json::from_value(loose).map_err(|source| Vol1Error::Header {
            path: header_path.clone(),
            source,
        })?;
    if header.dtype != header.kind.dtype() {
        return Err(Vol1Error::DtypeMismatch {
            kind: header.kind.as_str(),
            dtype: header.dtype,
        });
    }
    let bytes = fs::read(&raw_path).map_err(|source| Vol1Error::Io {
        path: raw_path.clone(),
        source,
    })?;
    let n = header.dims.iter().product::<usize>();
    if bytes.len() != n * 4 {
        return Err(Vol1Error::LengthMismatch {
            path: raw_path,
            dims: header.dims,
            expected_bytes: n * 4,
            actual_bytes: bytes.len(),
        });
    }
    let chunks = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    let data = match header.kind {
        VolumeKind::Image => VolumeData::F32(chunks.map(f32::from_le_bytes).collect()),
        VolumeKind::Mask | VolumeKind::BranchLabels => {
            VolumeData::I32(chunks.map(i32::from_le_bytes).collect())
        }
    };
    Ok(Volume::new(header.dims, header.spacing_mm, header.kind, data)?)
}
