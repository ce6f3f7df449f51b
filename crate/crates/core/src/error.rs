use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("accesses target different memories: {0} vs {1}")]
    MismatchedMemory(String, String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("enumeration volume {volume} exceeds budget {budget}")]
    BoundsBudgetExceeded { volume: u64, budget: u64 },

    #[error("nodes `{0}` and `{1}` share no ancestor")]
    DisjointTrees(String, String),

    #[error("inner controller `{0}` lacks an initiation interval or cycle annotations")]
    MissingSchedule(String),

    #[error("address {address:?} outside array bounds {bounds:?}")]
    OutOfBounds { address: Vec<i64>, bounds: Vec<u64> },

    #[error("no partition parallelotope satisfies coverage for {0}")]
    NoValidP(String),

    #[error("{0} is not a Mersenne number 2^n - 1 with 2 <= n <= 16")]
    NotMersenne(u64),

    #[error("{0} does not divide a Mersenne number with a small cofactor")]
    NoMersenneMultiple(u64),

    #[error("{constant} needs more than {radius} signed power-of-two terms")]
    NotRepresentable { constant: u64, radius: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no valid banking scheme within the search budget")]
    NoSolution,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
