//! Error type shared by all toolkit modules.

/// Errors produced by the simulation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// A source or microphone position violates the room geometry.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A power calibration target cannot be met (e.g. silent input).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Invalid or inconsistent configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// Not enough samples or frames for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A covariance regime has fewer frames than channels (not invertible).
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Array shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite sample or coefficient was encountered.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A per-bin filter does not correspond to a real time-domain response.
    #[error("complex time response: {0}")]
    ComplexTimeResponse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
