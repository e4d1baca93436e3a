use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gauge error: dP - 2 Psi residual {residual:.3e} exceeds {tolerance:.1e}")]
    Gauge { residual: f64, tolerance: f64 },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("solvability error: right-hand side has mean {mean:.3e}")]
    Solvability { mean: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("parse error at '{path}': {message}")]
    Parse { path: String, message: String },
    #[error("formula mismatch in {what}: discrepancy {discrepancy:.3e} exceeds {tolerance:.1e}")]
    Transcription {
        what: String,
        discrepancy: f64,
        tolerance: f64,
    },
}
