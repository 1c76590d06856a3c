use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("disruption {disruption_id}: no train resumed after the reported start")]
    NoResumingTrain { disruption_id: i64 },

    #[error("need at least 2 disruptions to split, found {found}")]
    TooFewDisruptions { found: usize },

    #[error("broken residual chain: {0}")]
    BrokenChain(String),

    #[error("persistent divergence during warmup: {divergent} of {window} transitions in the last window (chain {chain})")]
    PersistentDivergence {
        chain: usize,
        divergent: usize,
        window: usize,
    },

    #[error("convergence check failed: max split R-hat {max_rhat:.4} exceeds {limit}")]
    NotConverged { max_rhat: f64, limit: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NoResumingTrain { .. } => "NoResumingTrain",
            Error::TooFewDisruptions { .. } => "TooFewDisruptions",
            Error::BrokenChain(_) => "BrokenChain",
            Error::PersistentDivergence { .. } => "PersistentDivergence",
            Error::NotConverged { .. } => "NotConverged",
            Error::InsufficientData(_) => "InsufficientData",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
