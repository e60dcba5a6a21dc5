use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fine mesh ({nf}) is not nested in coarse mesh ({nc}): nf must be a multiple of nc with nf/nc >= 2")]
    NonNestedMesh { nc: usize, nf: usize },

    #[error("coarse mesh needs at least 2 cells per side, got {nc}")]
    DegenerateMesh { nc: usize },

    #[error("coefficient is not positive ({value}) at cell ({i}, {j})")]
    NonPositiveCoefficient { i: usize, j: usize, value: f64 },

    #[error("sparse Cholesky factorization failed for a system of size {n}: {reason}")]
    FactorizationFailure { n: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("coarse Galerkin system is singular: {0}")]
    SingularCoarseSystem(String),

    #[error("reference solution has zero norm but the candidate does not")]
    ZeroReference,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid expression: {0}")]
    Expression(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error is a numerical failure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FactorizationFailure { .. }
                | Error::SingularCoarseSystem(_)
                | Error::Eigen(_)
                | Error::ZeroReference
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
