//! Line fit of dip positions against the odd multiplier `2k - 1`.

use serde::{Deserialize, Serialize};

use super::FitError;
use crate::spinmodel::FieldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimate {
    pub a_khz: f64,
    pub a_err_khz: f64,
    /// Ladder spacing `pi / (A + 2 wL)`, s.
    pub slope_s: f64,
    pub slope_err_s: f64,
    pub points: usize,
}

/// Weighted fit of `tau = s (2k - 1)` through the origin.
///
/// `points` are `(k, tau, sigma_tau)`. The slope uncertainty is inflated by
/// the square root of the reduced chi-square when it exceeds one.
/// `A = 1/(2s) - 2 fL`, `sigma_A = sigma_s / (2 s^2)`.
pub fn linear_fit_a(points: &[(u32, f64, f64)], field: &FieldConfig) -> Result<LinearEstimate, FitError> {
    if points.len() < 2 {
        return Err(FitError::DegenerateGroup(points.len()));
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(k, tau, sig) in points {
        let x = f64::from(2 * k - 1);
        let w = 1.0 / (sig * sig);
        sxx += w * x * x;
        sxy += w * x * tau;
    }
    let slope = sxy / sxx;
    let chi2: f64 = points
        .iter()
        .map(|&(k, tau, sig)| {
            let r = (tau - slope * f64::from(2 * k - 1)) / sig;
            r * r
        })
        .sum();
    let chi2_red = chi2 / (points.len() - 1) as f64;
    let slope_err = (1.0 / sxx).sqrt() * chi2_red.sqrt().max(1.0);
    let fl = field.omega_l() / (2.0 * std::f64::consts::PI);
    Ok(LinearEstimate {
        a_khz: (1.0 / (2.0 * slope) - 2.0 * fl) * 1e-3,
        a_err_khz: slope_err / (2.0 * slope * slope) * 1e-3,
        slope_s: slope,
        slope_err_s: slope_err,
        points: points.len(),
    })
}
