//! Volumetric segmentation networks on a small reverse-mode tape, the
//! Wasserstein critic, training losses and the Adam optimizer. All
//! arithmetic is f64.

pub mod blob;
pub mod conv;
pub mod error;
pub mod losses;
pub mod models;
pub mod objective;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use blob::Persist;
pub use error::{NnError, Result};
pub use losses::{LossReport, LossWeights};
pub use models::{
    build_segmenter, Arch, Critic, CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, LinearCritic,
    ModelConfig, SegModel,
};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
