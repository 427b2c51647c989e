use thiserror::Error;

pub type Result<T> = std::result::Result<T, ErgoError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ErgoError {
    #[error("rate matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("chain needs at least 2 states, got {0}")]
    TooFewStates(usize),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("negative off-diagonal rate q[{row}][{col}] = {value}")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to {sum:e}, exceeding tolerance {tol:e}")]
    NonConservative { row: usize, sum: f64, tol: f64 },

    #[error("chain is reducible: state {state} is not mutually reachable with state 0")]
    Reducible { state: usize },

    #[error("stationary linear system is singular or produced a non-positive solution")]
    SingularSystem,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("weight f[{index}] = {value} is below 1")]
    InvalidWeight { index: usize, value: f64 },

    #[error("supplied stationary distribution has residual {residual:e} > {tol:e}")]
    NotStationary { residual: f64, tol: f64 },

    #[error("beta must be > 1, got {0}")]
    InvalidBeta(f64),

    #[error("rate at index {index} must be positive")]
    ZeroRate { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state {state} out of range for {n} states")]
    StateOutOfRange { state: usize, n: usize },

    #[error("invalid time argument: {0}")]
    InvalidTime(String),

    #[error("eigen solver did not converge")]
    EigenFailure,

    #[error("matrix exponential overflow (t * max|q| = {0:e})")]
    Overflow(f64),

    #[error("insufficient data for rate fit: {0}")]
    InsufficientData(String),

    #[error("f-norm {value:e} at t = {t} is below the noise floor")]
    NoiseFloor { t: f64, value: f64 },

    #[error("brute-force norm limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("drift condition fails: c = {c:e} <= 0")]
    NoDrift { c: f64 },

    #[error("invalid small set: {0}")]
    InvalidSmallSet(String),

    #[error("invalid chain spec: {0}")]
    Parse(String),
}

impl ErgoError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            ErgoError::NotSquare { .. } => "NotSquare",
            ErgoError::TooFewStates(_) => "TooFewStates",
            ErgoError::NonFinite { .. } => "NonFinite",
            ErgoError::NegativeRate { .. } => "NegativeRate",
            ErgoError::NonConservative { .. } => "NonConservative",
            ErgoError::Reducible { .. } => "Reducible",
            ErgoError::SingularSystem => "SingularSystem",
            ErgoError::InvalidDistribution(_) => "InvalidDistribution",
            ErgoError::InvalidWeight { .. } => "InvalidWeight",
            ErgoError::NotStationary { .. } => "NotStationary",
            ErgoError::InvalidBeta(_) => "InvalidBeta",
            ErgoError::ZeroRate { .. } => "ZeroRate",
            ErgoError::DimensionMismatch { .. } => "DimensionMismatch",
            ErgoError::StateOutOfRange { .. } => "StateOutOfRange",
            ErgoError::InvalidTime(_) => "InvalidTime",
            ErgoError::EigenFailure => "EigenFailure",
            ErgoError::Overflow(_) => "Overflow",
            ErgoError::InsufficientData(_) => "InsufficientData",
            ErgoError::NoiseFloor { .. } => "NoiseFloor",
            ErgoError::TooLarge { .. } => "TooLarge",
            ErgoError::NoDrift { .. } => "NoDrift",
            ErgoError::InvalidSmallSet(_) => "InvalidSmallSet",
            ErgoError::Parse(_) => "Parse",
        }
    }

    /// Row index associated with the error, when there is one.
    pub fn row(&self) -> Option<usize> {
        match self {
            ErgoError::NonFinite { row, .. }
            | ErgoError::NegativeRate { row, .. }
            | ErgoError::NonConservative { row, .. } => Some(*row),
            ErgoError::Reducible { state } => Some(*state),
            _ => None,
        }
    }
}
