use std::fmt;

/// Which of the three conditions defining the open domain `U` failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainViolation {
    DelayNotInI,
    HatNotInV,
    QNotInW,
}

impl fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainViolation::DelayNotInI => write!(f, "r not in I^k"),
            DomainViolation::HatNotInV => write!(f, "(r,phi)^ not in V"),
            DomainViolation::QNotInW => write!(f, "Q(r,phi) not in W"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("argument {t} outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("non-finite sample at node {node}")]
    NonFinite { node: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("segments do not share a mesh")]
    MeshMismatch,

    #[error("point outside the domain U: {0}")]
    NotInU(DomainViolation),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("complement basis for component {component} could not be built: {detail}")]
    Construction { component: usize, detail: String },

    #[error(
        "mesh with {mesh} intervals is too coarse for level {level}, component {component}: \
         seed norm {achieved:.3e} must stay below {required:.3e} (try --mesh {suggested})"
    )]
    MeshTooCoarse {
        mesh: usize,
        level: usize,
        component: usize,
        achieved: f64,
        required: f64,
        suggested: usize,
    },

    #[error("point not in O: {0}")]
    NotInO(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("singular jacobian (|det| = {det:.3e})")]
    Singular { det: f64 },

    #[error("delay too small for explicit stepping: r_{index} = {value} > -{limit}")]
    DelayTooSmall { index: usize, value: f64, limit: f64 },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
