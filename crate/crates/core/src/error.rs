use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column \"{0}\"")]
    MissingColumn(String),

    #[error("treatment must be 0 or 1, found {value} in data row {row}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("cannot parse \"{value}\" in column \"{column}\" at data row {row}")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid fold count: k={k} with n={n} (need k >= 2 and n >= 2k)")]
    InvalidFoldCount { n: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error("value {value} in dimension {dim} lies outside the basis domain [{lo}, {hi}]")]
    DomainViolation {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("quantile knots coincide in dimension {dim}")]
    DegenerateKnots { dim: usize },

    #[error("invalid discrete DGP at {path}: {message}")]
    InvalidDgp { path: String, message: String },

    #[error("rule has no value for group \"{0}\"")]
    MissingGroup(String),

    #[error("rule value {value} for group \"{group}\" lies outside [0, 1]")]
    RuleOutOfRange { group: String, value: f64 },

    #[error("unknown group \"{0}\"")]
    UnknownGroup(String),

    #[error("regret aversion must satisfy alpha >= 1 (alpha > 1 where required), found {0}")]
    InvalidAlpha(f64),

    #[error("capacity must lie strictly inside (0, 1), found {0}")]
    InfeasibleCapacity(f64),

    #[error("invalid capacity problem: {0}")]
    InvalidCapacityProblem(String),

    #[error("KKT conditions violated after solve: {0}")]
    KktViolation(String),

    #[error("fold {fold}: too few usable rows in the {arm} arm")]
    InsufficientArm { fold: usize, arm: &'static str },

    #[error("invalid learner specification: {0}")]
    InvalidLearner(String),

    #[error("group {0} has no rows")]
    EmptyGroup(usize),

    #[error("capacity-constrained estimation requires a bracket basis")]
    UnsupportedBasis,

    #[error("invalid simulation setup: {0}")]
    InvalidSimulation(String),

    #[error("no closed-form oracle for this DGP")]
    NoClosedFormOracle,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Coarse category used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::NonBinaryTreatment { .. }
            | Error::ParseError { .. }
            | Error::DomainViolation { .. }
            | Error::DegenerateKnots { .. }
            | Error::InsufficientArm { .. }
            | Error::EmptyGroup(_)
            | Error::MissingGroup(_)
            | Error::UnknownGroup(_) => ErrorKind::Data,
            Error::KktViolation(_) | Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Config,
        }
    }

    /// Variant name, used as the machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::ParseError { .. } => "ParseError",
            Error::InvalidSchema(_) => "InvalidSchema",
            Error::InvalidFoldCount { .. } => "InvalidFoldCount",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidBasis(_) => "InvalidBasis",
            Error::DomainViolation { .. } => "DomainViolation",
            Error::DegenerateKnots { .. } => "DegenerateKnots",
            Error::InvalidDgp { .. } => "InvalidDgp",
            Error::MissingGroup(_) => "MissingGroup",
            Error::UnknownGroup(_) => "UnknownGroup",
            Error::RuleOutOfRange { .. } => "RuleOutOfRange",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::InfeasibleCapacity(_) => "InfeasibleCapacity",
            Error::InvalidCapacityProblem(_) => "InvalidCapacityProblem",
            Error::KktViolation(_) => "KktViolation",
            Error::InsufficientArm { .. } => "InsufficientArm",
            Error::InvalidLearner(_) => "InvalidLearner",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::UnsupportedBasis => "UnsupportedBasis",
            Error::InvalidSimulation(_) => "InvalidSimulation",
            Error::NoClosedFormOracle => "NoClosedFormOracle",
            Error::Numerical(_) => "Numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
