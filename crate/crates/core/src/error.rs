use thiserror::Error;

/// Errors raised by parsing, model assembly and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LfError {
    #[error("malformed case (line {line}): {message}")]
    MalformedCase { line: usize, message: String },

    #[error("unsupported case feature: {0}")]
    UnsupportedFeature(String),

    #[error("network is not radial: {0}")]
    NotRadial(String),

    #[error("branch {branch} has non-positive tap ratio {tap}")]
    BadTap { branch: usize, tap: f64 },

    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("differential is rank deficient ({0})")]
    RankDeficient(String),

    #[error("linear system is singular ({0})")]
    SingularSystem(String),

    #[error("direction system is singular ({0})")]
    SingularDirectionSystem(String),

    #[error("Riemannian Hessian is singular on the tangent space ({0})")]
    SingularHessian(String),

    #[error("power-flow Jacobian is singular ({0})")]
    SingularJacobian(String),

    #[error("non-positive upstream voltage {value:e} on line {line}")]
    NonPositiveVoltage { line: usize, value: f64 },

    #[error("cone retraction degenerates on line {line} (denominator {denominator:e})")]
    DegenerateCone { line: usize, denominator: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailed { backtracks: usize },

    #[error("iteration limit of {0} reached")]
    MaxIterExceeded(usize),

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, LfError>;
