//! Held-out evaluation: thresholded predictions scored with the overlap and
//! tree metrics.

use serde::{Deserialize, Serialize};
use wdunet_core::metrics::{centerline_metrics, overlap_metrics};
use wdunet_core::{extract_patches, normalize, Grid3, Pool, Voxel};
use wdunet_nn::{SegModel, Tensor};

use crate::dataset::Case;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Scores of one evaluated unit (a test patch or a whole case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub id: String,
    pub dsc: f64,
    pub precision: f64,
    pub iou: f64,
    /// `None` when the unit holds no ground-truth centerline.
    pub td: Option<f64>,
    pub bd: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dsc: MeanStd,
    pub precision: MeanStd,
    pub td: MeanStd,
    pub bd: MeanStd,
    pub iou: MeanStd,
}

impl MetricSummary {
    /// Tree metrics average over the units that have a centerline.
    pub fn of(units: &[UnitScore]) -> Self {
        let col = |f: &dyn Fn(&UnitScore) -> Option<f64>| -> MeanStd {
            MeanStd::of(&units.iter().filter_map(f).collect::<Vec<_>>())
        };
        Self {
            dsc: col(&|u| Some(u.dsc)),
            precision: col(&|u| Some(u.precision)),
            td: col(&|u| u.td),
            bd: col(&|u| u.bd),
            iou: col(&|u| Some(u.iou)),
        }
    }
}

/// Foreground where the predicted probability exceeds 0.5.
pub fn predict_mask(seg: &SegModel, image: &Grid3<f32>) -> Result<Grid3<u8>> {
    let x = Tensor::from_volumes(image.dims(), [image.as_slice()])?;
    let p = seg.segment(&x)?;
    let bits = p.data().iter().map(|&v| u8::from(v > 0.5)).collect();
    Ok(Grid3::from_vec(image.dims(), bits).expect("segment preserves the spatial shape"))
}

pub fn score_unit(
    id: &str,
    pred: &Grid3<u8>,
    gt: &Grid3<u8>,
    centerlines: &[Vec<Voxel>],
    detect_threshold: f64,
) -> Result<UnitScore> {
    let o = overlap_metrics(pred, gt)?;
    let has_tree = centerlines.iter().any(|c| !c.is_empty());
    let t = if has_tree {
        Some(centerline_metrics(pred, centerlines, detect_threshold)?)
    } else {
        None
    };
    Ok(UnitScore {
        id: id.to_string(),
        dsc: o.dsc,
        precision: o.precision,
        iou: o.iou,
        td: t.map(|t| t.td),
        bd: t.map(|t| t.bd),
    })
}

/// Every test patch of the pool, in index order.
pub fn evaluate_pool(seg: &SegModel, pool: &Pool, detect_threshold: f64) -> Result<Vec<UnitScore>> {
    let mut out = Vec::with_capacity(pool.test().len());
    for &i in pool.test() {
        let p = pool.evaluation_patch(i)?;
        let pred = predict_mask(seg, &p.image)?;
        let id = format!("{}@{}-{}-{}", p.case_id, p.origin[0], p.origin[1], p.origin[2]);
        out.push(score_unit(&id, &pred, &p.mask, &p.centerlines, detect_threshold)?);
    }
    Ok(out)
}

/// Segments a whole case by tiling it with `patch_shape` windows (stride =
/// patch shape), stitching the predictions and cropping the padding.
pub fn predict_case(seg: &SegModel, case: &Case, patch_shape: [usize; 3]) -> Result<Grid3<u8>> {
    let dims = case.image.dims();
    let mut out = Grid3::filled(dims, 0u8);
    let tiles = extract_patches(&case.id, &case.image, &case.mask, &case.labels, None, patch_shape, patch_shape)?;
    for t in tiles {
        let pred = predict_mask(seg, &normalize(&t.image))?;
        for z in 0..patch_shape[0].min(dims[0] - t.origin[0]) {
            for y in 0..patch_shape[1].min(dims[1] - t.origin[1]) {
                for x in 0..patch_shape[2].min(dims[2] - t.origin[2]) {
                    let v = *pred.get([z, y, x]);
                    out.set([t.origin[0] + z, t.origin[1] + y, t.origin[2] + x], v);
                }
            }
        }
    }
    Ok(out)
}

pub fn evaluate_case(seg: &SegModel, case: &Case, patch_shape: [usize; 3], detect_threshold: f64) -> Result<UnitScore> {
    let pred = predict_case(seg, case, patch_shape)?;
    let gt = case.mask.to_mask_grid().expect("mask volume");
    let lines: Vec<Vec<Voxel>> = case.tree.branches.iter().map(|b| b.centerline.clone()).collect();
    score_unit(&case.id, &pred, &gt, &lines, detect_threshold)
}
