//! Error types shared across the crate.

/// Errors produced by grid operations, schedule solving, sampling and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimension or layout mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated an operation contract (e.g. upsampling an
    /// already-high patch).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Internal consistency check failed (e.g. overlapping stage intervals).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// The schedule optimizer exhausted its iteration budget. The best
    /// parameters seen so far are attached so callers can still inspect them.
    #[error("schedule solve did not converge within budget (best jsd {best_jsd:.3e})")]
    SolveNotConverged {
        best_jsd: f64,
        plan: Box<crate::schedule::SchedulePlan>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
