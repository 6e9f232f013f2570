use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every variant renders as a single line; [`Error::code`] gives a stable
/// machine-readable prefix for it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} is outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("all singular values are zero")]
    ZeroEnergy,

    #[error("cannot build a reflector from a zero vector")]
    ZeroVector,

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("constraint infeasible at iteration {iteration}: {reason}")]
    Infeasible { iteration: usize, reason: String },

    #[error("no eligible column with nonzero residual norm at iteration {iteration}")]
    RankDeficient { iteration: usize },

    #[error("{0} is not supported")]
    Unsupported(&'static str),

    #[error("{sensors} sensors cannot determine {rank} coefficients")]
    Underdetermined { sensors: usize, rank: usize },

    #[error("information matrix is singular")]
    Singular,

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("{0}")]
    OutOfRange(String),

    #[error(
        "{count} feasible placements exceed the enumeration cap of {cap}; \
         brute force is only meant for desk-scale systems"
    )]
    CapExceeded { count: u128, cap: u64 },

    #[error("stability number {number} exceeds the explicit-scheme bound {bound}")]
    Unstable { number: f64, bound: f64 },

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::RankOutOfRange { .. } => "rank-out-of-range",
            Error::NonFinite { .. } => "non-finite",
            Error::Empty(_) => "empty-input",
            Error::ZeroEnergy => "zero-energy",
            Error::ZeroVector => "zero-vector",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidConstraint(_) => "invalid-constraint",
            Error::Infeasible { .. } => "infeasible",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::Unsupported(_) => "unsupported",
            Error::Underdetermined { .. } => "underdetermined",
            Error::Singular => "singular",
            Error::NotPositiveDefinite => "not-spd",
            Error::OutOfRange(_) => "out-of-range",
            Error::CapExceeded { .. } => "cap-exceeded",
            Error::Unstable { .. } => "unstable",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Stage { source, .. } => source.code(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
