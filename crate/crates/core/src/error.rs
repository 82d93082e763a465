use alloc::string::String;

/// Errors produced by the separation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A signal or frame container violates its shape invariants.
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    /// A non-finite value was found in input data.
    #[error("non-finite value in channel {channel} at sample {sample}")]
    NonFinite { channel: usize, sample: usize },

    /// A parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs disagree on a dimension.
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The signal does not contain a single full analysis block.
    #[error("signal too short: need at least {needed} samples, found {found}")]
    SignalTooShort { needed: usize, found: usize },

    /// A covariance matrix handed to the sphering stage is not symmetric.
    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    /// A per-bin demixing matrix became numerically singular. `iteration`
    /// is 0 when the check ran outside the separation loop.
    #[error("singular demixing matrix at iteration {iteration}, frequency bin {bin}")]
    Singular { iteration: usize, bin: usize },

    /// The iteration produced non-finite values.
    #[error("numerical divergence at iteration {iteration}, frequency bin {bin}")]
    Divergence { iteration: usize, bin: usize },

    /// Every contribution is zero, so no signal-to-interference ratio exists.
    #[error("SIR undefined: all contributions are zero")]
    UndefinedSir,
}

impl Error {
    /// True for failures of the numerical iteration itself (as opposed to
    /// bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Divergence { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
