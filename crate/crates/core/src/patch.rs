//! Sliding-window patch extraction and per-patch intensity normalization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid3, Voxel};
use crate::tree::TreeGraph;
use crate::volume::Volume;

#[derive(Debug, Error, PartialEq)]
pub enum PatchError {
    #[error("volume dims disagree: image {image:?}, mask {mask:?}, branch labels {labels:?}")]
    DimsMismatch {
        image: [usize; 3],
        mask: [usize; 3],
        labels: [usize; 3],
    },
    #[error("{what} must have every component >= 1, got {value:?}")]
    BadWindow { what: &'static str, value: [usize; 3] },
    #[error("expected an image volume and two integer volumes")]
    WrongKinds,
}

/// Fixed-shape training unit cut from one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub image: Grid3<f32>,
    pub mask: Grid3<u8>,
    pub branch_labels: Grid3<u32>,
    pub case_id: String,
    pub origin: Voxel,
    /// Ground-truth branch centerlines restricted to this window, in
    /// patch-local coordinates. Empty when the case carries no tree.
    #[serde(default)]
    pub centerlines: Vec<Vec<Voxel>>,
}

impl Patch {
    pub fn shape(&self) -> [usize; 3] {
        self.image.dims()
    }
}

/// Window origins along one axis: `ceil(max(dim - patch, 0) / stride) + 1`
/// windows spaced by `stride`.
pub fn window_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let count = dim.saturating_sub(patch).div_ceil(stride) + 1;
    (0..count).map(|i| i * stride).collect()
}

pub fn extract_patches(
    case_id: &str,
    image: &Volume,
    mask: &Volume,
    branch_labels: &Volume,
    tree: Option<&TreeGraph>,
    patch_shape: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<Patch>, PatchError> {
    if patch_shape.contains(&0) {
        return Err(PatchError::BadWindow {
            what: "patch_shape",
            value: patch_shape,
        });
    }
    if stride.contains(&0) {
        return Err(PatchError::BadWindow {
            what: "stride",
            value: stride,
        });
    }
    if image.dims() != mask.dims() || image.dims() != branch_labels.dims() {
        return Err(PatchError::DimsMismatch {
            image: image.dims(),
            mask: mask.dims(),
            labels: branch_labels.dims(),
        });
    }
    let (Some(img), Some(msk), Some(lbl)) = (
        image.to_image_grid(),
        mask.to_mask_grid(),
        branch_labels.to_label_grid(),
    ) else {
        return Err(PatchError::WrongKinds);
    };
    let dims = image.dims();
    let pad = img
        .as_slice()
        .iter()
        .copied()
        .fold(f32::INFINITY, f32::min);

    let origins: Vec<Vec<usize>> = (0..3)
        .map(|a| window_origins(dims[a], patch_shape[a], stride[a]))
        .collect();
    let mut out = Vec::new();
    for &oz in &origins[0] {
        for &oy in &origins[1] {
            for &ox in &origins[2] {
                let origin = [oz, oy, ox];
                let mut pi = Grid3::filled(patch_shape, pad);
                let mut pm = Grid3::filled(patch_shape, 0u8);
                let mut pl = Grid3::filled(patch_shape, 0u32);
                for z in 0..patch_shape[0].min(dims[0].saturating_sub(oz)) {
                    for y in 0..patch_shape[1].min(dims[1].saturating_sub(oy)) {
                        for x in 0..patch_shape[2].min(dims[2].saturating_sub(ox)) {
                            let src = [oz + z, oy + y, ox + x];
                            let dst = [z, y, x];
                            pi.set(dst, *img.get(src));
                            pm.set(dst, *msk.get(src));
                            pl.set(dst, *lbl.get(src));
                        }
                    }
                }
                let centerlines = tree
                    .map(|t| crop_centerlines(t, origin, patch_shape))
                    .unwrap_or_default();
                out.push(Patch {
                    image: pi,
                    mask: pm,
                    branch_labels: pl,
                    case_id: case_id.to_string(),
                    origin,
                    centerlines,
                });
            }
        }
    }
    Ok(out)
}

/// Branch centerlines that intersect the window, shifted to window
/// coordinates. Branches with no voxel inside are dropped.
pub fn crop_centerlines(tree: &TreeGraph, origin: Voxel, shape: [usize; 3]) -> Vec<Vec<Voxel>> {
    tree.branches
        .iter()
        .map(|b| {
            b.centerline
                .iter()
                .filter(|v| (0..3).all(|a| v[a] >= origin[a] && v[a] < origin[a] + shape[a]))
                .map(|v| [v[0] - origin[0], v[1] - origin[1], v[2] - origin[2]])
                .collect::<Vec<_>>()
        })
        .filter(|c| !c.is_empty())
        .collect()
}

/// Zero-mean, unit-variance rescaling. Constant patches map to zeros.
pub fn normalize(patch: &Grid3<f32>) -> Grid3<f32> {
    let n = patch.len().max(1) as f64;
    let mean = patch.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch
        .as_slice()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return patch.map(|_| 0.0);
    }
    patch.map(|&v| ((v as f64 - mean) / std) as f32)
}
