use thiserror::Error;

use crate::graph::VertexId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph parameters: {0}")]
    InvalidGraph(String),

    #[error("unknown vertex id {0}")]
    UnknownVertex(VertexId),

    #[error("illegal firing at vertex {vertex}: {reason}")]
    IllegalFiring { vertex: VertexId, reason: &'static str },

    #[error("strategy selected ineligible vertex {0}")]
    IllegalStrategy(VertexId),

    #[error("scheduler selected ineligible mover at vertex {0}")]
    IllegalMover(VertexId),

    #[error("graph has no sink: an explicit step cap is required")]
    MissingStepCap,

    #[error("K has no boundary exit")]
    NoBoundaryExit,

    #[error("vertex id mapping mismatch: {0}")]
    IdMapping(String),

    #[error("invalid density law: {0}")]
    InvalidDensity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solve failed: {0}")]
    Solve(String),
}

pub type Result<T> = std::result::Result<T, Error>;
