use thiserror::Error;

/// Crate-wide error type. Stage-level context (which pipeline stage failed)
/// is attached by the pipeline via [`Error::Stage`].
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown system kind `{0}`")]
    UnknownSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory diverged (non-finite or out of bounds) at step {step}")]
    Divergence { step: usize },

    #[error("series too short: need at least {need} samples, got {got}")]
    ShortSeries { need: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "state pair not reachable: atanh argument {value} out of (-1,1) at component {component}"
    )]
    AtanhDomain { component: usize, value: f64 },

    #[error("matrix rejected {draws} times; invertibility bound never met")]
    RejectionExceeded { draws: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("non-finite loss at epoch {epoch}; training aborted")]
    NonFiniteLoss { epoch: usize },

    #[error("forecast escaped the training region at step {step} (factor {factor:.1})")]
    Escape { step: usize, factor: f64 },

    #[error("config hash mismatch: {left} vs {right}")]
    HashMismatch { left: String, right: String },

    #[error("malformed {what} at line {line}: {detail}")]
    Parse {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("model container: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
