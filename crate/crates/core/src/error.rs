use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dimension {dim} exceeds the cap of {cap}")]
    SizeCap { dim: usize, cap: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("measurement is inconsistent: {0}")]
    Measurement(String),

    #[error("outcome has probability {prob:e}, below the floor")]
    ImpossibleOutcome { prob: f64 },

    #[error("label bins do not cover the support: {0}")]
    Coverage(String),

    #[error("wave function reached the periodic boundary (boundary/peak density {ratio:e} at t = {time})")]
    WrapAround { ratio: f64, time: f64 },

    #[error("time step too large: dt*max|V|/hbar = {0:.3} > 0.1")]
    StepTooLarge(f64),

    #[error("configuration is at a node of the wave function (density {density:e})")]
    NearNode { density: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("search budget exhausted: {0}")]
    Budget(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
