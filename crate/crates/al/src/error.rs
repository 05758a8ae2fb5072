use std::path::PathBuf;

use thiserror::Error;
use wdunet_core::metrics::MetricError;
use wdunet_core::{PatchError, PhantomError, PoolError, Vol1Error};
use wdunet_nn::NnError;

#[derive(Debug, Error)]
pub enum AlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Volume(#[from] Vol1Error),
    #[error("case {index}: {source}")]
    Phantom {
        index: usize,
        #[source]
        source: PhantomError,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dataset problem: {0}")]
    Data(String),
    #[error("labeled set is empty")]
    EmptyLabeled,
    #[error("query of {requested} patches but only {available} are unlabeled")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("unlabeled set is empty")]
    EmptyUnlabeled,
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl AlError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| Self::Json { path, source }
    }
}

pub type Result<T, E = AlError> = std::result::Result<T, E>;
