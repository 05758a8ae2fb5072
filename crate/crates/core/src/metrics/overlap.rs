use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::grid::Grid3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub dsc: f64,
    pub iou: f64,
    pub precision: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Voxelwise overlap between binary masks. When both masks are empty every
/// ratio is 1; an empty prediction against a non-empty truth has precision 0.
pub fn overlap_metrics(pred: &Grid3<u8>, gt: &Grid3<u8>) -> Result<OverlapReport, MetricError> {
    if pred.dims() != gt.dims() {
        return Err(MetricError::ShapeMismatch {
            left: pred.dims(),
            right: gt.dims(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(OverlapReport::from_counts(tp, fp, fn_))
}

impl OverlapReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        if tp + fp + fn_ == 0 {
            return Self {
                dsc: 1.0,
                iou: 1.0,
                precision: 1.0,
                tp,
                fp,
                fn_,
            };
        }
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            dsc: ratio(2 * tp, 2 * tp + fp + fn_),
            iou: ratio(tp, tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            tp,
            fp,
            fn_,
        }
    }
}
