//! Coupled deep learning for cross-modal embeddings.
//!
//! A trunk network maps samples from two modalities into one embedding
//! space. Training couples two modality-specific softmax heads through a
//! trace-norm penalty (optimized in its variational form with an auxiliary
//! matrix Γ) and an orthogonality penalty, and adds a cross-modal triplet
//! ranking loss on semi-hard triplets mined inside each batch.
//!
//! Module map:
//! - [`linalg`]: dense matrices, symmetric eigendecomposition, SVD, PSD roots
//! - [`net`]: fully connected trunk with manual backpropagation
//! - [`coupling`]: coupled heads, Γ refresh, relevance loss
//! - [`ranking`]: triplet mining and loss
//! - [`trainer`]: alternating minimization loop
//! - [`data`]: synthetic generator, dataset files, batch sampling
//! - [`eval`]: rank-1, ROC, VR@FAR, scatter diagnostics
//! - [`config`], [`checkpoint`], [`cli`]: run plumbing

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod net;
pub mod numcheck;
pub mod ranking;
pub mod rng;
pub mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::CheckpointError;
pub use config::{Config, ConfigError};
pub use coupling::{CoupledHeads, CouplingError, HeadParams};
pub use data::{DataError, Dataset, Modality, SynthSpec};
pub use eval::{EvalError, EvalReport};
pub use linalg::{LinalgError, Matrix};
pub use net::{Activation, EmbeddingNet, LayerSpec, NetError};
pub use ranking::{RankingConfig, RankingError, Triplet};
pub use trainer::{TrainConfig, TrainError, TrainState};

/// Any failure of a command, grouped for exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{what}: expected {expected}, found {actual}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_DATA: i32 = 3;
    pub const EXIT_NUMERIC: i32 = 4;
    pub const EXIT_IO: i32 = 5;

    /// Process exit status: 2 config, 3 data, 4 numeric, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(ConfigError::Io { .. }) | Error::Io { .. } => Self::EXIT_IO,
            Error::Config(_) => Self::EXIT_CONFIG,
            Error::Data(e) => data_code(e),
            Error::Train(e) => match e {
                TrainError::Config(_) | TrainError::Ranking(_) => Self::EXIT_CONFIG,
                TrainError::Data(d) => data_code(d),
                TrainError::NonFiniteLoss { .. } => Self::EXIT_NUMERIC,
                TrainError::Net(n) => net_code(n),
                TrainError::Coupling(CouplingError::Hyperparameter(_)) => Self::EXIT_CONFIG,
                TrainError::Coupling(CouplingError::Linalg(_)) => Self::EXIT_NUMERIC,
                TrainError::Coupling(_)
                | TrainError::MissingModality { .. }
                | TrainError::LabelRange { .. }
                | TrainError::HeadWidth { .. } => Self::EXIT_DATA,
            },
            Error::Eval(e) => match e {
                EvalError::ZeroNorm { .. } | EvalError::Linalg(_) => Self::EXIT_NUMERIC,
                _ => Self::EXIT_DATA,
            },
            Error::Checkpoint(CheckpointError::Io { .. }) => Self::EXIT_IO,
            Error::Checkpoint(_) | Error::Mismatch { .. } => Self::EXIT_DATA,
            Error::Net(n) => net_code(n),
        }
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Io { .. } => Error::EXIT_IO,
        DataError::Spec(_) => Error::EXIT_CONFIG,
        _ => Error::EXIT_DATA,
    }
}

fn net_code(e: &NetError) -> i32 {
    match e {
        NetError::NonFinite(_) => Error::EXIT_NUMERIC,
        NetError::DimensionMismatch { .. } | NetError::StaleTape => Error::EXIT_DATA,
        _ => Error::EXIT_CONFIG,
    }
}
