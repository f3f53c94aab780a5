//! Log-log least squares for convergence rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Exponent `p` in `err ~ C h^p`.
    pub slope: f64,
    /// `ln C`.
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Fit `ln y = intercept + slope ln x` over the pairs with both entries
/// positive and finite. At least three such pairs are required.
pub fn fit_rate(x: &[f64], y: &[f64]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    linear_fit(&pts)
}

/// Plain least squares `y = intercept + slope x`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Result<RateFit> {
    let n = pts.len();
    if n < 3 {
        return Err(Error::InvalidParameter {
            name: "fit data",
            reason: format!("need at least 3 usable points, got {n}"),
        });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "fit data",
            reason: "abscissae are all equal".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        let f = fit_rate(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_positive_points() {
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0]).is_err());
    }
}
