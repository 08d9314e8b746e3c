use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("filter must have odd length, got {0}")]
    EvenLength(usize),

    #[error("expected a {expected} filter, got {got}")]
    WrongKind { expected: &'static str, got: &'static str },

    #[error("coefficient decimation by {decimation} folds the stopband over (D * f_stop = {product} > 1)")]
    FoldOver { decimation: usize, product: f64 },

    #[error("invalid bank configuration: {0}")]
    InvalidConfig(String),

    #[error("decimation factor {0} is not part of the configured set")]
    UnknownDecimation(usize),

    #[error("band index {band} out of range 0..={max}")]
    BandOutOfRange { band: usize, max: usize },

    #[error("masking filter for band {band} is infeasible: {reason}")]
    MaskingInfeasible { band: usize, reason: String },

    #[error("filter design did not converge: {0}")]
    DesignFailed(String),

    #[error("input too short: need {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("energy matrix has no row for D = {0}")]
    MissingRow(usize),

    #[error("decimation subset is empty")]
    EmptySubset,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
