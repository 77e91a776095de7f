use std::path::PathBuf;

use crate::solver::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate predictor `{name}`: all values are equal")]
    DegeneratePredictor { name: String },

    #[error("predictor `{name}` has no usable cutpoints")]
    EmptyGrid { name: String },

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("grid references unknown predictor `{0}`")]
    UnknownPredictor(String),

    #[error("no cutpoint grid for predictor `{0}`")]
    MissingGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("outcome has a single class; both 0 and 1 are required")]
    SingleClass,

    #[error("no signal: every column is orthogonal to the intercept-only residuals")]
    NoSignal,

    #[error("invalid penalty λ = {0}; must be finite and non-negative")]
    InvalidLambda(f64),

    #[error("invalid weight ω = {0}; must be finite and ≥ 1")]
    InvalidWeight(f64),

    #[error("solver did not converge in {iterations} sweeps (KKT violation {kkt_violation:.3e})")]
    NonConvergence {
        iterations: usize,
        kkt_violation: f64,
        best: Box<FitResult>,
    },

    #[error("path fit failed at λ = {lambda:.6e}: {source}")]
    PathFit {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("all {0} subsample fits failed")]
    AllFitsFailed(usize),

    #[error("{failed} of {total} replications failed (limit 10%)")]
    TooManyFailedReplications { failed: usize, total: usize },

    #[error("correlation matrix is not positive semi-definite (pivot {pivot} = {value:.3e})")]
    NotPositiveSemiDefinite { pivot: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("outcome column `{0}` not found")]
    MissingOutcomeColumn(String),

    #[error("no usable rows in {0}")]
    NoUsableRows(PathBuf),

    #[error("outcome values outside {{0,1}} at rows {rows:?}")]
    InvalidOutcome { rows: Vec<usize> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | InvalidLambda(_) | InvalidWeight(_) | NotPositiveSemiDefinite { .. } => {
                ErrorKind::Config
            }
            NonConvergence { .. } | AllFitsFailed(_) | TooManyFailedReplications { .. } => {
                ErrorKind::Numerical
            }
            PathFit { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
