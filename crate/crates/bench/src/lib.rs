//! Experiment definitions behind the `holofit` command line: best s-term
//! curves, sparse polynomial learning, trained emulation networks and the
//! Hilbert-valued diffusion benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod output;
pub mod provenance;
pub mod stats;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] holofit_core::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl BenchError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BenchError::Config(msg.into())
    }
}

/// Config schema version accepted by every experiment.
pub const CONFIG_VERSION: u32 = 1;

pub(crate) fn check_version(version: u32) -> Result<()> {
    if version != CONFIG_VERSION {
        return Err(BenchError::config(format!(
            "unsupported config version {version}, expected {CONFIG_VERSION}"
        )));
    }
    Ok(())
}
