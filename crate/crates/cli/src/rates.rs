//! Convergence-rate fits on error series.

use achopf_core::fit::{fit_rate, RateFit};
use serde::Serialize;
use thiserror::Error;

/// Slopes below this are reported as non-convergent.
pub const CONVERGENT_SLOPE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least 3 positive error values, {0} left after dropping")]
    TooFew(usize),
    #[error("x and error series differ in length ({0} vs {1})")]
    Length(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesFit {
    pub fit: RateFit,
    /// Abscissae whose error was zero, negative or non-finite.
    pub dropped: Vec<f64>,
    pub convergent: bool,
}

impl SeriesFit {
    pub fn warning(&self, name: &str) -> Option<String> {
        (!self.dropped.is_empty()).then(|| {
            format!("{name}: dropped {} non-positive error value(s) at x = {:?}", self.dropped.len(), self.dropped)
        })
    }
}

/// Least squares on `ln err = c + p ln x`. Non-positive errors are dropped
/// and listed; fewer than three survivors is an error.
pub fn fit_series(x: &[f64], err: &[f64]) -> Result<SeriesFit, FitError> {
    if x.len() != err.len() {
        return Err(FitError::Length(x.len(), err.len()));
    }
    let dropped: Vec<f64> = x
        .iter()
        .zip(err)
        .filter(|(_, e)| !(e.is_finite() && **e > 0.0))
        .map(|(x, _)| *x)
        .collect();
    let left = x.len() - dropped.len();
    if left < 3 {
        return Err(FitError::TooFew(left));
    }
    let fit = fit_rate(x, err).map_err(|_| FitError::TooFew(left))?;
    Ok(SeriesFit {
        fit,
        dropped,
        convergent: fit.slope >= CONVERGENT_SLOPE,
    })
}
