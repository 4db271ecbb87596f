use thiserror::Error;

use crate::protocol::Party;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square: {rows} rows, {cols} columns")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("{0} fails unitarity")]
    NotUnitary(String),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("duplicate qubit label `{0}`")]
    DuplicateLabel(String),

    #[error("unknown qubit label `{0}`")]
    UnknownLabel(String),

    #[error("label sets differ: {left:?} vs {right:?}")]
    LabelSetMismatch { left: Vec<String>, right: Vec<String> },

    /// Projection onto the requested outcome has (numerically) zero weight.
    /// Branch enumerators treat this as "skip", not as a failure.
    #[error("impossible branch: measuring `{qubit}` = {bit} has probability {probability:e}")]
    ImpossibleBranch {
        qubit: String,
        bit: u8,
        probability: f64,
    },

    #[error("map is not a permutation of 0..{0}")]
    NotBijective(usize),

    #[error("invalid block operation: {0}")]
    InvalidOperation(String),

    #[error("protocol bug: {party} acted on `{qubit}`, which it does not own")]
    LocalityViolation { party: Party, qubit: String },

    #[error("invalid branch: {0}")]
    InvalidBranch(String),

    #[error("unknown gate `{0}`")]
    UnknownGate(String),
}

impl Error {
    pub fn is_impossible_branch(&self) -> bool {
        matches!(self, Error::ImpossibleBranch { .. })
    }
}
