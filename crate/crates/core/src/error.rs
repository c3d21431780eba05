use thiserror::Error;

use crate::valuation::ItemSet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Decreasing marginals fail: `v(T + j) - v(T) > v(S + j) - v(S)` with `S ⊆ T`.
    #[error("valuation is not submodular: S={small:?}, T={large:?}, item {item}")]
    NotSubmodular {
        small: ItemSet,
        large: ItemSet,
        item: usize,
    },

    #[error("unknown deviation rule `{0}`")]
    UnknownDeviation(String),

    #[error("invalid deviation: {0}")]
    InvalidDeviation(String),

    #[error("config error at `{path}` (line {line}, column {column}): {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
