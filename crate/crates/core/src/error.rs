use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories surfaced by every layer of the crate.
///
/// [`Error::category`] gives a stable, machine-parsable tag used by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid sector geometry: {0}")]
    Geometry(String),

    #[error("simulation contract violated: {0}")]
    Sim(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss in {trajectory}")]
    NonFiniteLoss { trajectory: String },

    #[error("stale batch: collected under version {batch}, parameters at version {params}")]
    StaleBatch { batch: u64, params: u64 },

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("worker failed on episode seed {seed}: {source}")]
    Worker {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("unknown encoder tag {0}")]
    UnknownEncoder(u32),
    #[error("tensor layout does not match network config: {0}")]
    LayoutMismatch(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Geometry(_) => "geometry",
            Error::Sim(_) => "sim",
            Error::Shape { .. } | Error::Graph(_) => "autodiff",
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => "numeric",
            Error::StaleBatch { .. } => "stale-batch",
            Error::Probability(_) => "probability",
            Error::Checkpoint(_) => "checkpoint",
            Error::Worker { .. } => "worker",
            Error::Csv { .. } => "csv",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
