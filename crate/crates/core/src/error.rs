use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("inconsistent dimension in record {record}: expected {expected}, found {found}")]
    InconsistentDimension {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("k = {k} exceeds {what} = {limit}")]
    KTooLarge { k: usize, limit: usize, what: &'static str },

    #[error("query {query} has {have} results, need at least {need}")]
    LengthShortfall { query: usize, have: usize, need: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("code entry {value} in subspace {subspace} is out of range for {centroids} centroids")]
    CodeOutOfRange {
        subspace: usize,
        value: usize,
        centroids: usize,
    },

    #[error("neighbor id {id} of vertex {vertex} out of range (n = {n})")]
    IdOutOfRange { vertex: usize, id: u64, n: usize },

    #[error("vertex {vertex} has degree {degree} > max degree {max}")]
    DegreeExceeded {
        vertex: usize,
        degree: usize,
        max: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("degenerate calibration: {0}")]
    Degenerate(String),

    #[error("layout capacity exceeded: {0}")]
    CapacityExceeded(String),

    #[error("id {id} is not allocated in region {region}")]
    Unallocated { id: u64, region: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::RawIo(_) => "io",
            Error::Empty(_) => "empty",
            Error::Malformed(_) => "malformed",
            Error::InconsistentDimension { .. } => "inconsistent_dimension",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::KTooLarge { .. } => "k_too_large",
            Error::LengthShortfall { .. } => "length_shortfall",
            Error::InvalidParam(_) => "invalid_param",
            Error::CodeOutOfRange { .. } => "code_out_of_range",
            Error::IdOutOfRange { .. } => "id_out_of_range",
            Error::DegreeExceeded { .. } => "degree_exceeded",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::Degenerate(_) => "degenerate",
            Error::CapacityExceeded(_) => "capacity_exceeded",
            Error::Unallocated { .. } => "unallocated",
            Error::Version { .. } => "version",
        }
    }
}
