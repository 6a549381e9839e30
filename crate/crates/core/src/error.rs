use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("manifest entry {index} ({audio}): {msg}")]
    InvalidEntry {
        index: usize,
        audio: String,
        msg: String,
    },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate speaker statistics: pitch std must be > 0, got {0}")]
    DegenerateStats(f64),

    #[error("non-finite loss term `{term}`{}: {value}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        term: String,
        step: Option<u64>,
        value: f64,
    },

    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("adapter: {0}")]
    Adapter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{0}")]
    InvalidInput(String),

    #[error("external scorer: {0}")]
    Scorer(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, machine-parseable error category.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "file-not-found"
            }
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidEntry { .. } => "data-invalid",
            Error::Config(_) => "config-invalid",
            Error::Shape(_) => "shape",
            Error::DegenerateStats(_) => "data-invalid",
            Error::NonFinite { .. } => "training-diverged",
            Error::UnknownId { .. } => "unknown-id",
            Error::Adapter(_) => "adapter",
            Error::Checkpoint(_) => "checkpoint-invalid",
            Error::Wav(_) => "audio",
            Error::InvalidInput(_) => "invalid-input",
            Error::Scorer(_) => "scorer",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
