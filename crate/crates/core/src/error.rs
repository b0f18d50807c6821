use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum KqseError {
    #[error("polynomial order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: u32, max: u32 },

    #[error("degenerate phase setting: {0}")]
    DegenerateSetting(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampler support [{lo}, {hi}] holds only {mass:.12} of the probability mass")]
    SupportTooSmall { lo: f64, hi: f64, mass: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid pilot magnitude {0} for bandwidth selection")]
    InvalidPilot(f64),

    #[error("noise characteristic function vanishes at {0}; deconvolution impossible")]
    DeconvolutionImpossible(f64),

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numerical gate failed: {0}")]
    NumericalGate(String),

    #[error("term budget exceeded: {terms} terms requested, at most {budget} allowed; {hint}")]
    TermBudget { terms: u64, budget: u64, hint: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KqseError>;
