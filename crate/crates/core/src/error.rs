//! Error taxonomy shared across the crate.

use crate::expr::ExprError;
use crate::numerics::Estimate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Expression syntax or identifier problem, with byte offset.
    #[error("parse error: {0}")]
    Parse(#[from] ExprError),

    /// Scenario or policy fails a structural invariant (weights, ranges,
    /// unbound `u`, ...). The message names the offending field and witness.
    #[error("validation error: {0}")]
    Validation(String),

    /// Inputs are outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An expression evaluated outside [0, 1] beyond tolerance.
    #[error("range error: {function} = {value} at (x={x}, u={u:?}) lies outside [0, 1]")]
    Range { function: String, x: f64, u: Option<f64>, value: f64 },

    /// The numeric backend could not reach the requested accuracy. Carries
    /// the best estimate obtained before giving up.
    #[error("numeric failure: {message} (best estimate {} +/- {})", best.value, best.error_bound)]
    NumericFailure { message: String, best: Estimate },

    /// Two algebraically equal computation routes disagreed beyond combined
    /// tolerance; indicates a backend bug rather than a bad input.
    #[error(
        "internal consistency failure: direct form {direct} vs outcome difference {difference} \
         differ by more than {tolerance}"
    )]
    Inconsistency { direct: f64, difference: f64, tolerance: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("scenario document error: {0}")]
    Json(#[from] serde_json::Error),
}
