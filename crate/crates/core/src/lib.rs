//! Volumes, seeded airway phantoms, the `VOL1` file format, patch pools for
//! active learning and the overlap / airway-tree evaluation metrics.

pub mod grid;
pub mod metrics;
pub mod patch;
pub mod phantom;
pub mod pool;
pub mod seed;
pub mod tree;
pub mod vol1;
pub mod volume;

pub use grid::{Grid3, Voxel};
pub use patch::{extract_patches, normalize, Patch, PatchError};
pub use phantom::{generate_phantom, Phantom, PhantomError, PhantomSpec};
pub use pool::{init_splits, Access, Membership, Pool, PoolError, PoolState, SplitFractions};
pub use tree::{Branch, TreeGraph};
pub use vol1::{load_volume, save_volume, Vol1Error};
pub use volume::{Volume, VolumeData, VolumeError, VolumeKind};
