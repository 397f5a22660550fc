use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the command line front-end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Divergence,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: input dimension must be at least 2")]
    InvalidDimension(usize),

    #[error("batch of {0} rows is too small for batch statistics (need at least 2)")]
    BatchTooSmall(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid density at index {index}: {value}")]
    InvalidDensity { index: usize, value: f64 },

    #[error("no candidate bandwidth produced a finite leave-one-out score")]
    NoValidBandwidth,

    #[error("kernel weights vanish numerically around the query point")]
    EmptyNeighborhood,

    #[error("split configuration: {0}")]
    SplitConfiguration(String),

    #[error("degenerate batch: all pairwise distances are zero")]
    DegenerateBatch,

    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },

    #[error("invalid sample count {count} for {available} points")]
    InvalidCount { count: usize, available: usize },

    #[error("neighbourhood size {n} is invalid for {points} points")]
    InvalidNeighborhood { n: usize, points: usize },

    #[error("mape is undefined: target at index {0} is zero")]
    MapeUndefined(usize),

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("file is truncated or corrupt: {0}")]
    Corrupt(String),

    #[error("non-finite value at row {row}: {what}")]
    NonFinite { row: usize, what: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("dimension mismatch: model expects d={expected}, data has d={found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("csv: {0}")]
    Csv(String),

    #[error("method {method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(String),
}

impl Error {
    /// Stable machine-readable identifier for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidBandwidth(_) => "invalid_bandwidth",
            Error::DegenerateData(_) => "degenerate_data",
            Error::InvalidDensity { .. } => "invalid_density",
            Error::NoValidBandwidth => "no_valid_bandwidth",
            Error::EmptyNeighborhood => "empty_neighborhood",
            Error::SplitConfiguration(_) => "split_configuration",
            Error::DegenerateBatch => "degenerate_batch",
            Error::TooFewPoints(_) => "too_few_points",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Diverged { .. } => "diverged_training",
            Error::InvalidCount { .. } => "invalid_count",
            Error::InvalidNeighborhood { .. } => "invalid_n",
            Error::MapeUndefined(_) => "mape_undefined",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Corrupt(_) => "corrupt_file",
            Error::NonFinite { .. } => "non_finite_value",
            Error::DuplicateId(_) => "duplicate_id",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Csv(_) => "csv",
            Error::Method { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Diverged { .. } => ErrorClass::Divergence,
            Error::Method { source, .. } => source.class(),
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::Io(_) | Error::Image(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn tagged(self, method: impl Into<String>) -> Error {
        Error::Method {
            method: method.into(),
            source: Box::new(self),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
