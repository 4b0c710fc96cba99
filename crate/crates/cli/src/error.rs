use std::io;

use rgi_core::dataset::DatasetError;
use rgi_core::metrics::MetricsError;
use rgi_core::model::ModelError;
use rgi_core::training::TrainError;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_VERSION: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io { .. } => EXIT_IO,
            Self::Dataset(e) => dataset_code(e),
            Self::Model(e) => model_code(e),
            Self::Train(e) => match e {
                TrainError::NonFiniteGradient => EXIT_NON_FINITE,
                TrainError::InvalidConfig(_) | TrainError::EmptyDataset(_) => EXIT_CONFIG,
                TrainError::Dataset(e) => dataset_code(e),
                TrainError::Model(e) => model_code(e),
                TrainError::BothZero => 1,
            },
            Self::Metrics(e) => match e {
                MetricsError::EmptyDataset => EXIT_CONFIG,
                MetricsError::Model(e) => model_code(e),
                _ => 1,
            },
        }
    }
}

fn dataset_code(e: &DatasetError) -> i32 {
    match e {
        DatasetError::VersionMismatch { .. } | DatasetError::DimensionMismatch { .. } => {
            EXIT_VERSION
        }
        DatasetError::InvalidConfig(_) | DatasetError::Simulation(_) => EXIT_CONFIG,
        _ => EXIT_IO,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::BadMagic(_)
        | ModelError::VersionMismatch { .. }
        | ModelError::ArchitectureMismatch(_) => EXIT_VERSION,
        ModelError::Io(_) | ModelError::Truncated => EXIT_IO,
        ModelError::ShapeMismatch { .. } | ModelError::CacheMismatch => 1,
    }
}
