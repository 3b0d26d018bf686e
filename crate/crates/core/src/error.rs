use std::io;

use thiserror::Error;

use crate::tree::{EntityId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("entity {0} already present with different content")]
    DuplicateEntity(EntityId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("corrupt encoding: {0}")]
    Corrupt(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("structural invariant violated: {0}")]
    Structure(String),

    #[error("sync did not converge after {rounds} rounds")]
    NonConvergence {
        rounds: usize,
        report: Box<crate::sync::SyncReport>,
    },

    #[error("scenario invalid: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}
