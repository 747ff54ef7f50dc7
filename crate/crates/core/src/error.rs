use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{context}: {source}")]
    IoAt {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("checksum mismatch in {what} of record at offset {offset}")]
    ChecksumMismatch { offset: u64, what: &'static str },

    #[error("truncated frame at offset {offset}")]
    TruncatedFrame { offset: u64 },

    #[error("record of {len} bytes exceeds the {max}-byte limit")]
    RecordTooLarge { len: u64, max: u64 },

    #[error("group key must not be empty")]
    EmptyKey,

    #[error("malformed keyed record: {0}")]
    MalformedRecord(String),

    #[error("example has no feature named `{0}`")]
    MissingFeature(String),

    #[error("feature `{0}` is not a scalar")]
    NonScalarFeature(String),

    #[error("partition function failed on example {index}: {source}")]
    Partition {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input at line {line}: {message}")]
    Input { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("unknown group key {0:?}")]
    UnknownKey(String),

    #[error("group {0:?} has no examples")]
    EmptyGroup(String),

    #[error("dataset needs at least {needed} bytes but the memory budget is {budget}")]
    MemoryBudgetExceeded { needed: u64, budget: u64 },

    #[error("hierarchical index not found at {0}; build it first")]
    IndexMissing(PathBuf),

    #[error("corrupt shard data: {0}")]
    Corrupt(String),

    #[error("cannot decode example {index} of group {group:?}: {message}")]
    Decode {
        group: String,
        index: u64,
        message: String,
    },

    #[error("input must not be empty")]
    EmptyInput,

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("sizes must be positive, found {0}")]
    NonPositiveSize(f64),

    #[error("values have zero variance")]
    ZeroVariance,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("batch contains no prediction positions")]
    NoPredictions,

    #[error("training diverged in round {round} on client {client:?}")]
    Divergence { round: usize, client: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("round {round} outside schedule of {total} rounds")]
    ScheduleOutOfRange { round: usize, total: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io_at(context: impl Into<String>, source: io::Error) -> Self {
        Error::IoAt {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable name used in structured CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) | Error::IoAt { .. } => "io",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::TruncatedFrame { .. } => "truncated_frame",
            Error::RecordTooLarge { .. } => "record_too_large",
            Error::EmptyKey => "empty_key",
            Error::MalformedRecord(_) => "malformed_record",
            Error::MissingFeature(_) => "missing_feature",
            Error::NonScalarFeature(_) => "non_scalar_feature",
            Error::Partition { .. } => "partition",
            Error::Input { .. } => "input",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Manifest { .. } => "manifest",
            Error::UnknownKey(_) => "unknown_key",
            Error::EmptyGroup(_) => "empty_group",
            Error::MemoryBudgetExceeded { .. } => "memory_budget_exceeded",
            Error::IndexMissing(_) => "index_missing",
            Error::Corrupt(_) => "corrupt",
            Error::Decode { .. } => "decode",
            Error::EmptyInput => "empty_input",
            Error::Domain(_) => "domain",
            Error::NonPositiveSize(_) => "non_positive_size",
            Error::ZeroVariance => "zero_variance",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoPredictions => "no_predictions",
            Error::Divergence { .. } => "divergence",
            Error::NonFinite(_) => "non_finite",
            Error::ScheduleOutOfRange { .. } => "schedule_out_of_range",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

/// Renders a group key for messages; keys are usually UTF-8 but need not be.
pub(crate) fn display_key(key: &[u8]) -> String {
    String::from_utf8_lossy(key).into_owned()
}
