use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("problem violates standing assumptions: {}", .0.failures().join(", "))]
    RejectedSpec(Box<ValidationReport>),

    #[error("query {what} lies outside span [{lo}, {hi}]")]
    OutOfSpan { what: String, lo: f64, hi: f64 },

    #[error("state became non-finite at node {node}")]
    NonfiniteState { node: usize },

    #[error("explicit scheme unstable: CFL number {cfl:.4} exceeds 1")]
    CflViolation { cfl: f64 },

    #[error("mesh box too small: flow plus margin {margin:.4} leaves [{lo}, {hi}] on axis {axis}")]
    MeshTooSmall {
        axis: usize,
        lo: f64,
        hi: f64,
        margin: f64,
    },

    #[error("normal equations rank-deficient at node {node} ({columns} basis columns)")]
    SingularRegression { node: usize, columns: usize },

    #[error("path starts at {found:?}, expected {expected:?}")]
    WrongStart { expected: Vec<f64>, found: Vec<f64> },

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("need at least {needed} usable rows, got {found}")]
    InsufficientRows { needed: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable upper-case name used in CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RejectedSpec(_) => "REJECTED_SPEC",
            Error::OutOfSpan { .. } => "OUT_OF_SPAN",
            Error::NonfiniteState { .. } => "NONFINITE_STATE",
            Error::CflViolation { .. } => "CFL_VIOLATION",
            Error::MeshTooSmall { .. } => "MESH_TOO_SMALL",
            Error::SingularRegression { .. } => "SINGULAR_REGRESSION",
            Error::WrongStart { .. } => "WRONG_START",
            Error::IncompatibleGrid(_) => "INCOMPATIBLE_GRID",
            Error::InsufficientRows { .. } => "INSUFFICIENT_ROWS",
            Error::InvalidInput(_) => "INVALID_INPUT",
            Error::Config(_) => "CONFIG_ERROR",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
