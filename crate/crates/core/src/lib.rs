//! Simulation of observable-outcome risk scores deployed into the decision
//! process that generated their training data.
//!
//! A scenario fixes the counterfactual structure: the covariate law, a
//! discrete (possibly absent) confounder, the outcome regressions of both
//! treatment arms, and the baseline treatment propensity. On top of that the
//! crate computes what a fitted risk score looks like, what deploying it as a
//! threshold rule does to population outcomes, how far any policy sits from
//! the optimal treatment regime, and how the retrain-redeploy loop behaves
//! over time.
//!
//! Modules:
//! - [`expr`]: the arithmetic expression language scenario files use.
//! - [`scenario`]: counterfactual primitives, policies, and risk scores.
//! - [`numerics`]: quadrature / Monte Carlo / enumeration backends, root
//!   finding, and 1-D maximization.
//! - [`evaluation`]: population-level quantities and assumption audits.
//! - [`dynamics`]: deployment iteration and the expertise experiment.
//! - [`io`]: the JSON scenario document format and built-in scenarios.

pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod expr;
pub mod io;
pub mod numerics;
pub mod scenario;

pub use error::{Error, Result};

/// Format `value` with up to `sig` significant digits, positional where
/// reasonable and scientific otherwise, trailing zeros trimmed. Stable across
/// runs, so emitted files are byte-deterministic.
pub fn fmt_sig(value: f64, sig: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let sig = sig.max(1);
    let probe = format!("{:.*e}", sig - 1, value);
    let (mantissa, exp) = probe.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if exp < -4 || exp >= sig as i32 + 3 {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{m}e{exp}")
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let s = format!("{value:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

/// Round to `sig` significant digits (used before JSON serialization so
/// emitted numbers match the textual convention).
pub fn round_sig(value: f64, sig: usize) -> f64 {
    fmt_sig(value, sig).parse().unwrap_or(value)
}
