use thiserror::Error;

use crate::qp::{QpError, QpProblem};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("information level delta[{index}] = {value} is outside [0, 1]")]
    DeltaOutOfRange { index: usize, value: f64 },

    #[error("overlap matrix is not symmetric at ({row}, {col})")]
    AsymmetricOverlap { row: usize, col: usize },

    #[error("covariance is not positive semidefinite (most negative eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("cholesky factorization failed after {attempts} jitter attempts")]
    CholeskyFailure { attempts: usize },

    #[error("forecaster covariance is singular (eigenvalue ratio {ratio:e})")]
    SingularStructure { ratio: f64 },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("panel has no forecasters or no problems")]
    EmptyPanel,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("quadratic program failed while fitting {context}: {source}")]
    QpFailure {
        context: String,
        problem: Box<QpProblem>,
        #[source]
        source: QpError,
    },

    #[error("degenerate design: every forecaster is constant across problems")]
    DegenerateDesign,

    #[error("beta[{index}] = {value} is negative")]
    NegativeBeta { index: usize, value: f64 },

    #[error("requested {n_bins} bins for {k} forecast-outcome pairs")]
    TooManyBins { n_bins: usize, k: usize },

    #[error("need at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },

    #[error("design matrix is rank deficient (diagonal ratio {ratio:e})")]
    RankDeficientDesign { ratio: f64 },

    #[error("need at least {required} rows, got {got}")]
    TooFewRows { required: usize, got: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the error kind, with context layers peeled off.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DeltaOutOfRange { .. } => "DeltaOutOfRange",
            Error::AsymmetricOverlap { .. } => "AsymmetricOverlap",
            Error::NotPositiveSemidefinite { .. } => "NotPositiveSemidefinite",
            Error::CholeskyFailure { .. } => "CholeskyFailure",
            Error::SingularStructure { .. } => "SingularStructure",
            Error::InvalidPanel(_) => "InvalidPanel",
            Error::EmptyPanel => "EmptyPanel",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::QpFailure { .. } => "QpFailure",
            Error::DegenerateDesign => "DegenerateDesign",
            Error::NegativeBeta { .. } => "NegativeBeta",
            Error::TooManyBins { .. } => "TooManyBins",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::RankDeficientDesign { .. } => "RankDeficientDesign",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DatasetFormat(_) => "DatasetFormatError",
            Error::Parse(_) => "ParseError",
            Error::Config(_) => "ConfigError",
            Error::Context { source, .. } => source.kind(),
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }

    /// The innermost error, skipping any [`Error::Context`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context<C: Into<String>>(self, ctx: impl FnOnce() -> C) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context<C: Into<String>>(self, ctx: impl FnOnce() -> C) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: ctx().into(),
            source: Box::new(e),
        })
    }
}
