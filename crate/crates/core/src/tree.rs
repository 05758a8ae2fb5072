//! Labelled airway trees: branches with parent links and voxel centerlines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{adjacent_26, Voxel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub label: u32,
    /// 0 for the root branch.
    pub parent_label: u32,
    pub centerline: Vec<Voxel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeGraph {
    pub branches: Vec<Branch>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("branch labels must be 1..={expected_max} without gaps; found label {found}")]
    LabelGap { expected_max: u32, found: u32 },
    #[error("expected exactly one root branch, found {0}")]
    RootCount(usize),
    #[error("branch {label} references missing parent {parent}")]
    MissingParent { label: u32, parent: u32 },
    #[error("branch {0} has an empty centerline")]
    EmptyCenterline(u32),
    #[error("branch {label} centerline breaks 26-connectivity at position {position}")]
    Disconnected { label: u32, position: usize },
}

impl TreeGraph {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn branch(&self, label: u32) -> Option<&Branch> {
        self.branches.iter().find(|b| b.label == label)
    }

    pub fn parent_of(&self, label: u32) -> Option<u32> {
        self.branch(label).map(|b| b.parent_label)
    }

    pub fn children_of(&self, label: u32) -> Vec<u32> {
        self.branches
            .iter()
            .filter(|b| b.parent_label == label)
            .map(|b| b.label)
            .collect()
    }

    pub fn centerline_voxel_count(&self) -> usize {
        self.branches.iter().map(|b| b.centerline.len()).sum()
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let k = self.branches.len() as u32;
        let mut seen = vec![false; self.branches.len()];
        for b in &self.branches {
            if b.label == 0 || b.label > k || seen[(b.label - 1) as usize] {
                return Err(TreeError::LabelGap {
                    expected_max: k,
                    found: b.label,
                });
            }
            seen[(b.label - 1) as usize] = true;
        }
        let roots = self.branches.iter().filter(|b| b.parent_label == 0).count();
        if roots != 1 {
            return Err(TreeError::RootCount(roots));
        }
        for b in &self.branches {
            if b.parent_label > k || b.parent_label == b.label {
                return Err(TreeError::MissingParent {
                    label: b.label,
                    parent: b.parent_label,
                });
            }
            if b.centerline.is_empty() {
                return Err(TreeError::EmptyCenterline(b.label));
            }
            if let Some(position) = b
                .centerline
                .windows(2)
                .position(|w| !adjacent_26(w[0], w[1]))
            {
                return Err(TreeError::Disconnected {
                    label: b.label,
                    position: position + 1,
                });
            }
        }
        Ok(())
    }
}
