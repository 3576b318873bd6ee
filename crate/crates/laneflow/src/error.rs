//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("unknown topic '{0}'")]
    UnknownTopic(String),

    #[error("topic '{0}' already exists")]
    TopicExists(String),

    #[error("unknown partition {partition} for topic '{topic}'")]
    UnknownPartition { topic: String, partition: u32 },

    #[error("unknown consumer group '{group}' for topic '{topic}'")]
    UnknownGroup { topic: String, group: String },

    /// Transient append refusal (queue full or injected fault); producers
    /// retry these before giving up with `Backpressure`.
    #[error("transient append failure on '{topic}' partition {partition}: {reason}")]
    Transient {
        topic: String,
        partition: u32,
        reason: String,
    },

    #[error(
        "backpressure on '{topic}' partition {partition}: append failed after {attempts} attempts"
    )]
    Backpressure {
        topic: String,
        partition: u32,
        attempts: u32,
    },

    #[error("commit offset {offset} on partition {partition} is beyond high watermark {watermark}")]
    OffsetBeyondWatermark {
        partition: u32,
        offset: u64,
        watermark: u64,
    },

    #[error("commit offset {offset} on partition {partition} regresses below committed {committed}")]
    OffsetRegression {
        partition: u32,
        offset: u64,
        committed: u64,
    },

    #[error("batch envelope corrupt: {0}")]
    Envelope(String),

    #[error("need at least {need} rows, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("degenerate clustering: fewer distinct points than clusters")]
    DegenerateClustering,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("no model loaded")]
    NoModel,

    #[error("pipeline run failed: {0}")]
    Run(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a producer retry loop may recover from.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transient { .. })
    }
}
