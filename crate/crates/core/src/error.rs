//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("chain is not ergodic (violates aperiodicity/irreducibility)")]
    ChainNotErgodic,

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("feature matrix is rank deficient (smallest/largest singular value {ratio:.3e})")]
    DegenerateFeatures { ratio: f64 },

    #[error("weighted Gram matrix X^T D X is singular")]
    SingularWeighting,

    #[error("insufficient data: N = {n} samples with horizon H = {h} leaves no usable samples")]
    InsufficientData { n: usize, h: usize },

    #[error(
        "unsupported off-policy pair at state {state}, action {action}: \
         target probability {target_prob} > 0 but behavior probability is 0"
    )]
    UnsupportedOffPolicy {
        state: usize,
        action: usize,
        target_prob: f64,
    },

    #[error("invalid region: all actions zeroed at state {state}")]
    InvalidRegion { state: usize },

    #[error(
        "assumption violated: {what} (smallest C eigenvalue {min_eig_c:.3e}, \
         smallest A singular value {min_sv_a:.3e})"
    )]
    AssumptionViolation {
        what: String,
        min_eig_c: f64,
        min_sv_a: f64,
    },

    #[error("graph is not connected")]
    NotConnected,

    #[error("divergence detected at epoch {epoch}: error {error:.3e} vs initial {initial:.3e}")]
    Divergence {
        epoch: usize,
        error: f64,
        initial: f64,
    },

    #[error("sample index {index} outside usable range 0..{usable}")]
    IndexOutOfRange { index: usize, usable: usize },

    #[error("linear system is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
