use thiserror::Error;

use crate::environment::Vertex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("box [-{half_extent},{half_extent}]^{dim} has too many sites")]
    TooLarge { dim: usize, half_extent: i32 },

    #[error(
        "no acceptable cluster after {attempts} attempts (d={dim}, L={half_extent}, p={p}); \
         p is likely too close to or below the critical point for this box"
    )]
    RetryBudgetExhausted {
        dim: usize,
        half_extent: i32,
        p: f64,
        attempts: u32,
    },

    #[error("vertex {0} has the wrong dimension")]
    DimensionMismatch(Vertex),

    #[error("vertex {0} lies outside the box")]
    OutsideBox(Vertex),

    #[error("vertex {0} is not in the origin's cluster")]
    NotInCluster(Vertex),

    #[error("walk start {0} lies outside the pause region")]
    StartOutsidePauseRegion(Vertex),

    #[error("walk from {start} exceeded the step cap of {cap} steps (last position {last})")]
    StepCapExceeded { start: Vertex, last: Vertex, cap: u64 },

    #[error("walk is trapped at {0}: no open edges")]
    Trapped(Vertex),

    #[error("absorbing system is singular: the walk from {0} cannot leave the set")]
    NoEscape(Vertex),

    #[error("staged construction did not terminate within {0} stages")]
    StageCapExceeded(usize),

    #[error("parse error: {0}")]
    Parse(String),
}
