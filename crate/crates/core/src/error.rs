use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("growth condition not certifiable: {0}")]
    GrowthNotCertifiable(String),

    #[error("exponential out of range (norm {norm:e})")]
    ExponentialOutOfRange { norm: f64 },

    #[error("stability not certifiable on samples: fitted growth rate {omega} exceeds cap {cap}")]
    StabilityNotCertifiable { omega: f64, cap: f64 },

    #[error("step does not resolve oscillation: need at least {min_steps} steps")]
    UnresolvedOscillation { min_steps: usize },

    #[error("trajectory escaped after t = {last_time}")]
    Escaped { last_time: f64 },

    #[error("problem fingerprint mismatch")]
    FingerprintMismatch,

    #[error("degenerate partition: t = {t} is smaller than the block length {block}")]
    DegeneratePartition { t: f64, block: f64 },

    #[error("hyperbolicity violated: {0}")]
    HyperbolicityViolated(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("rate unresolvable: {0}")]
    RateUnresolvable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Failures of the numerics themselves, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ExponentialOutOfRange { .. }
                | Error::StabilityNotCertifiable { .. }
                | Error::Escaped { .. }
                | Error::RateUnresolvable(_)
                | Error::DegeneratePartition { .. }
        )
    }
}
