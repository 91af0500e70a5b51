use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    WindowTooLarge {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("non-finite loss at local step {step}")]
    NonFiniteLoss { step: usize },

    #[error("client {client} failed in round {round}: {source}")]
    Client {
        client: u32,
        round: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("missing correspondence for timestamp {0}")]
    MissingCorrespondence(u64),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::WindowTooLarge { .. } => "window_too_large",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Client { source, .. } => source.kind(),
            Error::MissingCorrespondence(_) => "missing_correspondence",
            Error::Invalid(_) => "invalid",
            Error::Wire(_) => "wire",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Decoding failures of the client-update / model wire format.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("truncated record: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("trailing bytes: {0}")]
    TrailingBytes(usize),
    #[error("unsupported sh degree {0}")]
    BadShDegree(u32),
}
