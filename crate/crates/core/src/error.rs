use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("truncation overflow: a term would hold {photons} photons but the cutoff is {max}")]
    TruncationOverflow { photons: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mode index {0} is not registered")]
    UnregisteredMode(usize),
    #[error("no mode registered as {0}")]
    UnknownMode(String),
    #[error("mode {0} is already registered")]
    DuplicateMode(String),
    #[error("time bin {bin} is outside the window of {max_bins} bins")]
    BinOverflow { bin: usize, max_bins: usize },
    #[error("state is not normalized (norm^2 = {0})")]
    UnnormalizedState(f64),
    #[error("states live on different mode registries")]
    RegistryMismatch,
    #[error("pair-number tail mass {tail:.3e} beyond n = {n_cut} exceeds tolerance {tolerance:.1e}")]
    TailMassTooLarge { tail: f64, n_cut: usize, tolerance: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("fit needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("background {background:.3e} is not below the mean {mean:.3e}")]
    BackgroundTooLarge { background: f64, mean: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl SimError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
