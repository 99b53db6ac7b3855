use thiserror::Error;

/// Errors raised by the laboratory. Every numeric rejection names where it
/// happened so that a failing experiment can be traced to a cell, node or stage.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("step {step} out of range along axis {axis} ({nodes} nodes)")]
    StepOutOfRange { axis: usize, step: isize, nodes: usize },

    #[error("region does not intersect the lattice")]
    EmptyRegion,

    #[error("truncation radius too small: supremum attained at the primal boundary for dual point {dual_point}")]
    TruncationRadius { dual_point: f64 },

    #[error("non-convex intermediate at stage `{stage}` (defect {defect:e})")]
    NonConvex { stage: &'static str, defect: f64 },

    #[error("unsupported integrand: {0}")]
    Unsupported(String),

    #[error("ball too close to the boundary for step {step}")]
    BallTooClose { step: usize },

    #[error("lattices are not nested: {0}")]
    NotNested(String),

    #[error("stencil of order {order} does not fit the lattice")]
    StencilOverflow { order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numeric failure at stage `{stage}`: {reason}")]
    Numeric { stage: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter { field, reason: reason.into() }
    }

    /// Rejections caused by the input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, LabError::Config { .. } | LabError::InvalidParameter { .. } | LabError::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
