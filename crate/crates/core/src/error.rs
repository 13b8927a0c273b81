//! Error types shared by every module of the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("location ({x}, {y}) lies outside the service area")]
    OutOfBounds { x: f64, y: f64 },

    #[error("all selected paths carry zero gain at ({x}, {y})")]
    DegenerateChannel { x: f64, y: f64 },

    #[error("sampling interval {interval} m exceeds the area extent")]
    EmptyDataset { interval: f64 },

    #[error("invalid pilot set: {0}")]
    InvalidPilot(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("noise variance must be positive, got {0}")]
    InvalidNoise(f64),

    #[error("no pilots transmitted; the estimator is undefined for tau = 0")]
    NoPilots,

    #[error("pilot Gram matrix is rank deficient")]
    RankDeficient,

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("regularization weight must be positive, got {0}")]
    InvalidRegularizer(f64),

    #[error("all mixture responsibilities underflowed")]
    NumericallyDegenerate,

    #[error("steepest descent diverged after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("grid size {d} m does not tile a {width} x {height} m area")]
    Partition { d: f64, width: f64, height: f64 },

    #[error("not enough samples: {0}")]
    InsufficientData(String),

    #[error("sample bank is empty")]
    NoSamples,

    #[error("location ({x}, {y}) is not inside grid {grid_id}")]
    GridMismatch { grid_id: u32, x: f64, y: f64 },

    #[error("NMSE undefined: ground-truth channel {index} has zero norm")]
    UndefinedMetric { index: usize },

    #[error("SNR must be positive, got {0}")]
    Domain(f64),

    #[error("training vector has constant {part} part")]
    ZeroRange { part: &'static str },

    #[error("unsupported denoiser kind: {0}")]
    UnsupportedDenoiser(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_)
            | Error::Config(_)
            | Error::InvalidPilot(_)
            | Error::InvalidRegularizer(_)
            | Error::InvalidNoise(_)
            | Error::Partition { .. }
            | Error::Domain(_)
            | Error::UnsupportedDenoiser(_) => ErrorClass::Config,
            Error::NumericallyDegenerate
            | Error::Divergence { .. }
            | Error::RankDeficient
            | Error::InvalidPrior(_)
            | Error::UndefinedMetric { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Errors raised while decoding a persisted channel-knowledge store.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"CSFM\"")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },

    #[error("corrupt store: {0}")]
    Corrupt(String),
}

/// Errors raised while parsing a text configuration file.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("key `{key}`: {reason}")]
    Invariant { key: String, reason: String },
}
