//! Error type shared across the crate.
//!
//! Variants are grouped by how a front end should react: configuration
//! problems, numerical singularities (usually fixable by increasing the
//! `H`-coefficients), and solver non-convergence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular constraint: |n.n| = {nn:.3e} <= {eps:.3e}")]
    SingularConstraint { nn: f64, eps: f64 },

    #[error("dual-to-primal map singular at t = {t}: {detail}; increase the H coefficients c")]
    DtpSingular { t: f64, detail: String },

    #[error(
        "dual-to-primal Newton failed at t = {t}: residual {residual:.3e} after {iters} iterations"
    )]
    DtpNonConvergence { t: f64, residual: f64, iters: usize },

    #[error("DtP failure at node {node}: {source}")]
    DtpAtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory diverged (non-finite state); last good time t = {last_good_t}")]
    Divergence { last_good_t: f64 },

    #[error("solver did not converge: residual {residual:.3e} after {iters} iterations")]
    NonConvergence { residual: f64, iters: usize },

    #[error("momentum map not invertible: {0}")]
    MomentumMapSingular(String),

    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),

    #[error("left validity domain of the velocity split: {0}")]
    DomainExit(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code a CLI front end should use for this error.
    /// 2 = configuration, 3 = non-convergence, 4 = numerical singularity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Json(_)
            | Error::DimensionMismatch { .. }
            | Error::Unsupported(_)
            | Error::Precondition(_) => 2,
            Error::NonConvergence { .. } | Error::DtpNonConvergence { .. } => 3,
            Error::SingularConstraint { .. }
            | Error::DtpSingular { .. }
            | Error::MomentumMapSingular(_)
            | Error::DegenerateConstraint(_)
            | Error::LinearSolve(_)
            | Error::Divergence { .. }
            | Error::DomainExit(_) => 4,
            Error::DtpAtNode { source, .. } => source.exit_code(),
            Error::Io(_) => 1,
        }
    }
}
