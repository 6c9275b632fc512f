//! Offline commands, deterministic replay and the live wire service.

pub mod client;
pub mod commands;
pub mod connection;
pub mod replay;
pub mod server;
pub mod wire;

use std::path::Path;

use thiserror::Error;

use crate::model::ModelError;
use crate::pipeline::PipelineError;
use crate::telemetry::TelemetryError;

pub use connection::{Connection, Reply, ServerContext, MAX_STRIKES};
pub use replay::{replay_session, ReplayClock};
pub use server::Server;
pub use wire::{WireBody, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("session {session}: {source}")]
    Session {
        session: String,
        #[source]
        source: PipelineError,
    },
    #[error("privacy script line {line}: {reason}")]
    PrivacyScript { line: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ServiceError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
        move |source| ServiceError::Io { path: path.display().to_string(), source }
    }
}
