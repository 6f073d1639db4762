use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("invalid bandwidth {bandwidth} for ring of {neurons} neurons (need 1 <= b < N/2)")]
    InvalidBandwidth { neurons: usize, bandwidth: usize },

    #[error("cannot place {requested} shortcuts: only {available} free (pre, post) pairs")]
    CapacityExceeded { requested: usize, available: usize },

    #[error("invalid population size: {0}")]
    SizeError(String),

    #[error("readout density {0} outside (0, 1]")]
    DensityOutOfRange(f64),

    #[error("modulatory population of {modulators} too large for layer of {neurons} (max N/8)")]
    ModulatorTooLarge { modulators: usize, neurons: usize },

    #[error("modulatory population must have at least one unit")]
    EmptyModulator,

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite membrane state: {0}")]
    NonFiniteState(String),

    #[error("pixel {index} has value {value}, outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },

    #[error("label {label} outside [0, {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("synapse group is not plastic")]
    NotPlastic,

    #[error("expected a {expected} synapse group, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("file truncated: needed {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label byte {value} at index {index} is not a digit class")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),

    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{context} ({path}): {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SnnError {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        SnnError::ShapeMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        SnnError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(
        context: &'static str,
        path: impl Into<PathBuf>,
        source: std::io::Error,
    ) -> Self {
        SnnError::Io {
            context,
            path: path.into(),
            source,
        }
    }
}
