//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, EngineError>;

/// Errors produced by market-data handling, calibration and simulation.
#[derive(Debug, Error)]
pub enum EngineError {
    /// An argument was non-finite or outside its domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A root-finding problem has no solution inside its arbitrage bounds.
    #[error("no solution: {0}")]
    NoSolution(String),

    /// A market-data file failed schema or invariant validation.
    #[error("load error in {file}{}: {reason}", row.map(|r| format!(", row {r}")).unwrap_or_default())]
    Load {
        file: String,
        row: Option<usize>,
        reason: String,
    },

    /// An iterative calibration diverged or failed its contract.
    #[error("calibration failure: {reason}")]
    CalibrationFailure {
        reason: String,
        /// Max abs error per iteration, for post-mortems.
        error_history: Vec<f64>,
    },

    /// A numerical scheme produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Simulation/pricing inputs do not match the requested operation.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A volatility fell below the floor where a formula divides by it.
    #[error("degenerate volatility: {0}")]
    DegenerateVol(String),

    /// A cross-sectional denominator collapsed below its floor.
    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    /// A kernel regression had too little local mass at an evaluation point.
    #[error("bandwidth too small: effective sample {effective:.2} below {min} at {at}")]
    BandwidthTooSmall {
        effective: f64,
        min: f64,
        at: String,
    },

    /// A broker quote cannot be represented as a correlation.
    #[error("unrepresentable quote: {0}")]
    UnrepresentableQuote(String),

    /// A conditional-variance estimate collapsed below its floor.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),
}

impl EngineError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EngineError::InvalidInput(msg.into())
    }
}
