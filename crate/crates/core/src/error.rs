use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ensemble configuration: {0}")]
    InvalidEnsemble(String),

    #[error("invalid subregion geometry: {0}")]
    InvalidGeometry(String),

    #[error("cross-ratio undefined: {0}")]
    UndefinedEta(String),

    #[error("not enough usable points for a fit: {usable} (need at least {needed})")]
    InsufficientPoints { usable: usize, needed: usize },

    #[error("no entanglement events were recorded; increase the number of iterations")]
    NoHits,

    #[error("no angle of the requested eta lies inside the measured region")]
    OutsideMeasuredRegion,

    #[error("accumulator keys do not match: {0}")]
    KeyMismatch(String),

    #[error("tableau is not a product of cat states: {0}")]
    NotCatForm(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
