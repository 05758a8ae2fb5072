//! Scalar volumes with spacing metadata.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid3;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimension {axis} is zero")]
    ZeroDim { axis: usize },
    #[error("spacing component {axis} must be strictly positive, got {value}")]
    BadSpacing { axis: usize, value: f64 },
    #[error("data length {actual} does not match dims product {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("mask voxel {index} has value {value}; masks hold only 0 and 1")]
    NonBinaryMask { index: usize, value: i32 },
    #[error("branch label voxel {index} is negative ({value})")]
    NegativeLabel { index: usize, value: i32 },
    #[error("{kind:?} volumes cannot hold {dtype} data")]
    KindDtype { kind: VolumeKind, dtype: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Image,
    Mask,
    BranchLabels,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Image => "image",
            VolumeKind::Mask => "mask",
            VolumeKind::BranchLabels => "branch_labels",
        }
    }

    /// Scalar type used on disk for this kind.
    pub fn dtype(self) -> &'static str {
        match self {
            VolumeKind::Image => "f32",
            VolumeKind::Mask | VolumeKind::BranchLabels => "i32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::F32(v) => v.len(),
            VolumeData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            VolumeData::F32(_) => "f32",
            VolumeData::I32(_) => "i32",
        }
    }
}

/// A validated 3D scalar grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    kind: VolumeKind,
    data: VolumeData,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        kind: VolumeKind,
        data: VolumeData,
    ) -> Result<Self, VolumeError> {
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(VolumeError::ZeroDim { axis });
        }
        for (axis, &value) in spacing_mm.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(VolumeError::BadSpacing { axis, value });
            }
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.dtype() != kind.dtype() {
            return Err(VolumeError::KindDtype {
                kind,
                dtype: data.dtype(),
            });
        }
        if let VolumeData::I32(values) = &data {
            for (index, &value) in values.iter().enumerate() {
                match kind {
                    VolumeKind::Mask if value != 0 && value != 1 => {
                        return Err(VolumeError::NonBinaryMask { index, value })
                    }
                    VolumeKind::BranchLabels if value < 0 => {
                        return Err(VolumeError::NegativeLabel { index, value })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            dims,
            spacing_mm,
            kind,
            data,
        })
    }

    pub fn image(grid: Grid3<f32>, spacing_mm: [f64; 3]) -> Result<Self, VolumeError> {
        let dims = grid.dims();
        Self::new(dims, spacing_mm, VolumeKind::Image, VolumeData::F32(grid.into_vec()))
    }

    pub fn mask(grid: &Grid3<u8>, spacing_mm: [f64; 3]) -> Result<Self, VolumeError> {
        let data = grid.as_slice().iter().map(|&v| v as i32).collect();
        Self::new(grid.dims(), spacing_mm, VolumeKind::Mask, VolumeData::I32(data))
    }

    pub fn branch_labels(grid: &Grid3<u32>, spacing_mm: [f64; 3]) -> Result<Self, VolumeError> {
        let data = grid.as_slice().iter().map(|&v| v as i32).collect();
        Self::new(
            grid.dims(),
            spacing_mm,
            VolumeKind::BranchLabels,
            VolumeData::I32(data),
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    /// Image intensities; `None` for mask and label volumes.
    pub fn to_image_grid(&self) -> Option<Grid3<f32>> {
        match &self.data {
            VolumeData::F32(v) => Grid3::from_vec(self.dims, v.clone()),
            VolumeData::I32(_) => None,
        }
    }

    /// Integer contents as a `{0,1}` grid (any non-zero value maps to 1).
    pub fn to_mask_grid(&self) -> Option<Grid3<u8>> {
        match &self.data {
            VolumeData::I32(v) => {
                Grid3::from_vec(self.dims, v.iter().map(|&x| u8::from(x != 0)).collect())
            }
            VolumeData::F32(_) => None,
        }
    }

    pub fn to_label_grid(&self) -> Option<Grid3<u32>> {
        match &self.data {
            VolumeData::I32(v) => Grid3::from_vec(self.dims, v.iter().map(|&x| x as u32).collect()),
            VolumeData::F32(_) => None,
        }
    }
}
