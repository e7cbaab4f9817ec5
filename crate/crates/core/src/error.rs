use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pricing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("problem is unbounded: {0}")]
    Unbounded(String),

    #[error("solver did not converge: {message} (max scaled KKT residual {residual:.3e})")]
    MaxIterations { message: String, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sensitivity matrix is singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("degenerate point: {0}")]
    Degenerate(String),

    #[error("polyhedron is empty")]
    EmptyPolyhedron,

    #[error("critical region is lower dimensional (Chebyshev radius {radius:.3e})")]
    LowerDimensional { radius: f64 },

    #[error("price {point:?} lies outside the parameter box")]
    OutsideDomain { point: Vec<f64> },

    #[error("{} sampled prices are not covered by any critical region", uncovered.len())]
    CoverageGap { uncovered: Vec<Vec<f64>> },

    #[error("region limit of {0} reached during exploration")]
    RegionLimit(usize),

    #[error(
        "fixed-point iteration did not converge; last demands {last:?}, previous {previous:?}"
    )]
    NonConvergent { last: Vec<f64>, previous: Vec<f64> },

    #[error("verification failed: {}", failed.join(", "))]
    Verification { failed: Vec<String> },
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::OutsideDomain { .. } => 2,
            Error::Infeasible(_) | Error::EmptyPolyhedron => 3,
            Error::CoverageGap { .. } | Error::RegionLimit(_) => 5,
            _ => 4,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Infeasible(_) => "infeasible",
            Error::Unbounded(_) => "unbounded",
            Error::MaxIterations { .. } => "max_iterations",
            Error::Numerical(_) => "numerical",
            Error::SingularSystem { .. } => "singular_system",
            Error::Degenerate(_) => "degenerate",
            Error::EmptyPolyhedron => "empty_polyhedron",
            Error::LowerDimensional { .. } => "lower_dimensional",
            Error::OutsideDomain { .. } => "outside_domain",
            Error::CoverageGap { .. } => "coverage_gap",
            Error::RegionLimit(_) => "region_limit",
            Error::NonConvergent { .. } => "non_convergent",
            Error::Verification { .. } => "verification_failed",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
