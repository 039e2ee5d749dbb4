use alloc::string::String;
use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A Gaussian moment or exact-expectation path was asked for more factors
    /// than the pairing-enumeration cap supports.
    #[error("unsupported moment order {order} (cap {cap})")]
    UnsupportedOrder { order: usize, cap: usize },
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    /// A truncated series was requested outside its convergence region.
    #[error("divergent series: spectral radius {radius:.6e} >= 1")]
    DivergentSeries { radius: f64 },
    /// Low-temperature limit requested but the kernel has no inverse; use a
    /// large finite beta instead.
    #[error("needs finite temperature: {0}")]
    NeedsFiniteTemperature(String),
    #[error("unsupported readout: {0}")]
    UnsupportedReadout(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    /// Memory guard tripped (e.g. the eight-index CNN covariance cap).
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    /// A Langevin chain left the stable region.
    #[error("chain {chain} diverged at step {step} (|theta| > 1e10, dt = {dt:.3e})")]
    Divergence { chain: usize, step: u64, dt: f64 },
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn invalid(msg: impl core::fmt::Display) -> Self {
        CoreError::InvalidArgument(alloc::format!("{msg}"))
    }
}
