//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter violates one of its documented invariants.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A sequence had the wrong length for the configured time grid.
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    /// Correlation is undefined because the wealth variance vanishes.
    #[error("degenerate variance: correlation undefined")]
    DegenerateVariance,

    /// The correlation bound lies at or beyond the admissibility bound,
    /// so no trading strategy can satisfy the constraint.
    #[error("inadmissible correlation bound: delta = {delta} must lie in (0, {bound})")]
    InadmissibleDelta { delta: f64, bound: f64 },

    /// The quadratic's leading coefficient vanishes, i.e. delta sits
    /// numerically on the admissibility bound itself.
    #[error("degenerate quadratic: delta coincides with the admissibility bound")]
    DegenerateLead,

    /// Exhaustive enumeration was requested for a horizon it cannot cover.
    #[error("horizon too large for exhaustive enumeration: {n_steps} steps exceeds {max}")]
    HorizonTooLarge { n_steps: usize, max: usize },

    /// Percentile of an empty sample set.
    #[error("empty sample set")]
    EmptySamples,

    /// No grid point satisfies the correlation constraint.
    #[error("empty feasible set: no grid point satisfies the correlation constraint")]
    EmptyFeasibleSet,

    /// Relative change against a zero base value.
    #[error("relative change undefined for zero base value")]
    ZeroBase,

    /// Emission was asked to write zero rows.
    #[error("no rows to emit")]
    EmptyRows,

    /// Malformed experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Every sweep point was skipped as inadmissible.
    #[error("all sweep values inadmissible")]
    AllValuesInadmissible,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
