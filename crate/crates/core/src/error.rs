use thiserror::Error;

/// Errors raised by the model, certifier, simulation and value engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {param:?} lies outside the parameter box")]
    ParamOutOfBox { param: Vec<f64> },

    #[error("diffusion matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NonPsdDiffusion { min_eigenvalue: f64 },

    #[error("invalid parameters for family `{family}`: {reason}")]
    BadFamilyParams { family: String, reason: String },

    #[error("no market price of risk at {location}: residual {residual:e} exceeds tolerance {tolerance:e}")]
    MprInfeasible {
        location: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("state exceeded 1e12 on path {path} at step {step}")]
    NumericOverflow { path: usize, step: usize },

    #[error("integrability precondition not certified: {0}")]
    PreconditionNotCertified(String),

    #[error("lattice too coarse: {reason}; {suggestion}")]
    GridTooCoarse { reason: String, suggestion: String },

    #[error("log-density grid exceeded: need {required} nodes but at most {allowed} allowed; raise `density_grid.max_nodes` to at least {required} or coarsen `density_grid.step`")]
    LogDensityGridExceeded { required: usize, allowed: usize },

    #[error("theorem hypotheses not satisfied: {0}")]
    NotApplicable(String),

    #[error("superhedge violated on path {path}: shortfall {shortfall:e} beyond slack {slack:e}")]
    SuperhedgeViolation {
        path: usize,
        shortfall: f64,
        slack: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    DomainMismatch(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
