//! Overlap and airway-tree evaluation metrics.

mod overlap;
mod parse;
mod skeleton;
mod tree_metrics;

use thiserror::Error;

use crate::grid::Voxel;

pub use overlap::{overlap_metrics, OverlapReport};
pub use parse::{parse_tree, parse_tree_with, ParseOptions};
pub use skeleton::skeletonize;
pub use tree_metrics::{centerline_metrics, tree_metrics, TreeReport, DEFAULT_DETECT_THRESHOLD};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("skeleton is empty")]
    EmptySkeleton,
    #[error("skeleton has {components} connected components, expected 1")]
    Disconnected { components: usize },
    #[error("skeleton contains a cycle; airway trees are acyclic")]
    Cyclic,
    #[error("no skeleton end point near root hint {hint:?}")]
    RootNotFound { hint: Voxel },
    #[error("ground-truth tree has no centerline voxels")]
    EmptyTree,
}
