use thiserror::Error;

/// Errors raised by the measure representations and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfviError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("all density entries are zero")]
    AllZero,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("quantile value {value} lies outside the grid domain [{x_min}, {x_max}]")]
    OutOfDomain { value: f64, x_min: f64, x_max: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tensor quadrature over {dim} coordinates is disabled; enable Monte Carlo for d > 3")]
    QuadratureOverflow { dim: usize },
    #[error("Gibbs weights underflow for coordinate {coordinate}")]
    Underflow { coordinate: usize },
    #[error("monotone projection collapsed a non-degenerate quantile vector (step size too large?)")]
    MonotonicityCollapse,
    #[error("explicit time step {dt} violates the stability bound {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("tridiagonal system is singular at row {row}")]
    TridiagonalSingular { row: usize },
    #[error("averaging window is empty (T must exceed burn-in)")]
    EmptyWindow,
    #[error("grids differ between solver configurations")]
    GridMismatch,
    #[error("{method} solver failed: {source}")]
    SolverFailure {
        method: String,
        #[source]
        source: Box<MfviError>,
    },
    #[error("fixed-point recursion diverged")]
    Divergence,
    #[error("too many atoms for exhaustive search: {0} (max 6)")]
    TooManyAtoms(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MfviError>;
