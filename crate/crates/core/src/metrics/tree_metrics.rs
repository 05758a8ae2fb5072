use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::grid::{Grid3, Voxel};
use crate::tree::TreeGraph;

/// Fraction of ground-truth branches whose centerline must be covered for
/// the branch to count as detected.
pub const DEFAULT_DETECT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub td: f64,
    pub bd: f64,
    pub detected_branches: usize,
    pub total_branches: usize,
    pub detected_length_vox: usize,
    pub total_length_vox: usize,
}

/// Tree-length (TD) and branch (BD) detection of a predicted mask against a
/// ground-truth tree. A centerline voxel is detected when the prediction
/// covers it.
pub fn tree_metrics(
    pred: &Grid3<u8>,
    gt_tree: &TreeGraph,
    detect_threshold: f64,
) -> Result<TreeReport, MetricError> {
    let lines: Vec<&[Voxel]> = gt_tree.branches.iter().map(|b| b.centerline.as_slice()).collect();
    centerline_metrics(pred, &lines, detect_threshold)
}

/// As [`tree_metrics`] over bare centerlines (e.g. a tree cropped to a patch).
pub fn centerline_metrics<L: AsRef<[Voxel]>>(
    pred: &Grid3<u8>,
    centerlines: &[L],
    detect_threshold: f64,
) -> Result<TreeReport, MetricError> {
    let total_length_vox: usize = centerlines.iter().map(|c| c.as_ref().len()).sum();
    if centerlines.is_empty() || total_length_vox == 0 {
        return Err(MetricError::EmptyTree);
    }
    let dims = pred.dims();
    let hit = |v: &Voxel| (0..3).all(|a| v[a] < dims[a]) && *pred.get(*v) != 0;
    let mut detected_length_vox = 0;
    let mut detected_branches = 0;
    for line in centerlines {
        let line = line.as_ref();
        let covered = line.iter().filter(|v| hit(v)).count();
        detected_length_vox += covered;
        if !line.is_empty() && covered as f64 >= detect_threshold * line.len() as f64 {
            detected_branches += 1;
        }
    }
    let total_branches = centerlines.len();
    Ok(TreeReport {
        td: detected_length_vox as f64 / total_length_vox as f64,
        bd: detected_branches as f64 / total_branches as f64,
        detected_branches,
        total_branches,
        detected_length_vox,
        total_length_vox,
    })
}
