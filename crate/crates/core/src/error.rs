use std::io;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    BadParam(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("block {block} out of range for {block_count} dimension blocks")]
    BadBlock { block: usize, block_count: usize },

    #[error("accumulator for candidate {candidate} is already pruned")]
    AlreadyPruned { candidate: u64 },

    #[error("negative partial distance {value} (dot products cannot be pruned)")]
    NegativePartial { value: f64 },

    #[error("block {block} already accumulated for candidate {candidate}")]
    BlockRevisited { candidate: u64, block: usize },

    #[error("no candidate partition plans")]
    NoCandidates,

    #[error("cannot merge results computed under different metrics")]
    MetricMismatch,

    #[error("simulation deadlocked with {incomplete} queries incomplete")]
    Deadlock { incomplete: usize },

    #[error("unknown node {0}")]
    UnknownNode(u32),

    #[error("node {node} does not hold block (shard {shard}, dim block {block})")]
    BlockNotResident {
        node: u32,
        shard: usize,
        block: usize,
    },

    #[error("result width mismatch: {0}")]
    WidthMismatch(String),

    #[error("malformed message: {0}")]
    Protocol(String),

    #[error("index file missing or unreadable: {0}")]
    MissingIndex(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn bad_param(msg: impl Into<String>) -> Error {
    Error::BadParam(msg.into())
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
