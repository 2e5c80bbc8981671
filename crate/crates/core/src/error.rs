use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite input at coordinate {0}")]
    NonFiniteInput(usize),

    #[error("invalid clique scope {scope:?}: {reason}")]
    InvalidScope { scope: Vec<usize>, reason: &'static str },

    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("worker {0} has no assignments")]
    UnassignedWorker(usize),

    #[error("non-finite score for particle {particle}")]
    NonFiniteScore { particle: usize },

    #[error("non-finite value in particle {particle}, coordinate {coordinate} at iteration {iteration}")]
    NonFiniteParticle {
        iteration: usize,
        particle: usize,
        coordinate: usize,
    },

    #[error("U-statistic needs at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
