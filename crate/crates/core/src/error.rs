use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge ({u}, {v}) has an endpoint outside [0, {n})")]
    OutOfRangeEdge { u: usize, v: usize, n: usize },

    #[error("edge list contains self-loop at vertex {0}; self-loops enter only through the operator variant")]
    SelfLoopInEdgeList(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("vertex {0} is assigned to more than one of train/val/test")]
    MaskOverlap(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vertex {vertex} has label {label}, outside [0, {classes})")]
    LabelOutOfRange { vertex: usize, label: usize, classes: usize },

    #[error("vertex {0} is isolated; the normalized operator is undefined there")]
    IsolatedVertexInNormalized(usize),

    #[error("invalid wave configuration: {0}")]
    InvalidWaveConfig(String),

    #[error("time {t} outside (0, {stop_time}]")]
    TimeOutOfRange { t: f64, stop_time: f64 },

    #[error("vertex {vertex} out of range for a graph with {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },

    #[error("graph with {n} vertices exceeds the dense oracle limit of {limit}")]
    TooLargeForOracle { n: usize, limit: usize },

    #[error("eigendecomposition failed: {0}")]
    ConvergenceFailure(String),

    #[error("eigenvalue {value} times k={k} is not integral")]
    NonIntegralSpectrum { value: f64, k: u32 },

    #[error("eigenvalues {0} and {1} coincide")]
    RepeatedEigenvalues(f64, f64),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid dimensions: {0}")]
    BadDimensions(String),

    #[error("tape does not match the parameters: {0}")]
    TapeMismatch(String),

    #[error("mask selects no vertices")]
    EmptyMask,

    #[error("parameter/gradient shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("file is empty: {0}")]
    EmptyFile(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable code printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfRangeEdge { .. } => "OutOfRangeEdge",
            Error::SelfLoopInEdgeList(_) => "SelfLoopInEdgeList",
            Error::DuplicateEdge(..) => "DuplicateEdge",
            Error::MaskOverlap(_) => "MaskOverlap",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::IsolatedVertexInNormalized(_) => "IsolatedVertexInNormalized",
            Error::InvalidWaveConfig(_) => "InvalidWaveConfig",
            Error::TimeOutOfRange { .. } => "TimeOutOfRange",
            Error::VertexOutOfRange { .. } => "VertexOutOfRange",
            Error::TooLargeForOracle { .. } => "TooLargeForOracle",
            Error::ConvergenceFailure(_) => "ConvergenceFailure",
            Error::NonIntegralSpectrum { .. } => "NonIntegralSpectrum",
            Error::RepeatedEigenvalues(..) => "RepeatedEigenvalues",
            Error::InsufficientSamples(_) => "InsufficientSamples",
            Error::BadDimensions(_) => "BadDimensions",
            Error::TapeMismatch(_) => "TapeMismatch",
            Error::EmptyMask => "EmptyMask",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::EmptyFile(_) => "EmptyFile",
            Error::ParseError { .. } => "ParseError",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::InvalidSplit(_) => "InvalidSplit",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::ConvergenceFailure(_) | Error::TapeMismatch(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
