use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("polar form of the zero quaternion is undefined")]
    DegenerateModulus,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |A - A^dagger| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("gamma has a pole at {0}")]
    Pole(f64),

    #[error("overflow in {0}")]
    Overflow(&'static str),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("K_alpha is singular at x = 0")]
    SingularAtZero,

    #[error("index {n} exceeds the supported maximum {max}")]
    IndexTooLarge { n: usize, max: usize },

    #[error("index {n} outside the family truncation {truncation}")]
    IndexOutOfRange { n: usize, truncation: usize },

    #[error("need at least {needed} sample points, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("series tail estimate {tail:e} above tolerance {tol:e} after {terms} terms")]
    TruncationNotConverged { tail: f64, tol: f64, terms: usize },

    #[error("no closed form available for this kernel")]
    NoClosedForm,

    #[error("points do not lie in a common complex slice")]
    SliceMismatch,

    #[error("kernel diagonal N(x) = {0:e} is not strictly positive")]
    DegenerateKernel(f64),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("quadrature budget exceeded: {nodes} nodes > {limit}")]
    BudgetExceeded { nodes: usize, limit: usize },

    #[error("quadrature rule has no nodes")]
    EmptyRule,

    #[error("epsilon {0} not in (0, 1)")]
    BadEpsilon(f64),

    #[error("partition cells overlap at node {node}")]
    OverlappingCells { node: usize },

    #[error("sampled basis is ill-conditioned (condition number {cond:e})")]
    IllConditionedBasis { cond: f64 },

    #[error("partition line {line}: {msg}")]
    PartitionSyntax { line: usize, msg: String },

    #[error("eigen-decomposition failed to converge")]
    EigenFailure,
}
