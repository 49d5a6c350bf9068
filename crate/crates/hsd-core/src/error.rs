use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Partial sums of the intensity kernel failed to reach the declared
    /// total before `j_max` was exhausted.
    #[error(
        "intensity kernel inconsistent from regime {regime}: declared total {total}, \
         enumerated {enumerated} after {j_max} targets (residual {residual:e})"
    )]
    KernelInconsistency {
        regime: u32,
        total: f64,
        enumerated: f64,
        residual: f64,
        j_max: u32,
    },

    #[error("negative intensity {value} for transition {from} -> {to}")]
    NegativeIntensity { from: u32, to: u32, value: f64 },

    #[error("series truncation error: {0}")]
    Truncation(String),

    #[error("all {n} paths were excluded; estimate is degenerate")]
    DegenerateEstimate { n: u64 },
}
