use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// An input lies outside the domain of the operation (NaN, out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A model parameter violates its invariants.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Linear solve or integration failed numerically.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("dataset ingestion failed: {0}")]
    Ingestion(String),
    #[error("mapping failed: {0}")]
    Mapping(String),
    #[error("orbit did not reach steady state: {0}")]
    SteadyState(String),
    #[error("integration unstable: {0}")]
    Integration(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(SimError::Domain(format!("{name} must be finite, got {v}")))
    }
}
