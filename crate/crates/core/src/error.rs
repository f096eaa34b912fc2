use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("decode error: {0}")]
    Decode(String),

    #[error("encode error: {0}")]
    Encode(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown {kind} `{id}`; valid ids: {}", valid.join(", "))]
    Registry {
        kind: &'static str,
        id: String,
        valid: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("adapter `{adapter}` unavailable: expected model at {}", path.display())]
    AdapterMissing { adapter: String, path: PathBuf },

    #[error("placement error: {0}")]
    Placement(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("refusing to run: {0}")]
    Leak(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Decode(_) => "decode",
            Error::Encode(_) => "encode",
            Error::Contract(_) => "contract",
            Error::Registry { .. } => "registry",
            Error::Config(_) => "config",
            Error::AdapterMissing { .. } => "adapter_missing",
            Error::Placement(_) => "placement",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Format { .. } => "format",
            Error::Leak(_) => "leak_guard",
            Error::Io { .. } => "io",
        }
    }
}
