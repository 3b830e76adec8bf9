//! Quasi-static carrier noise, calibrated against a single-ion Ramsey fringe.

use std::f64::consts::PI;

use crate::numeric::{brent, weighted_lstsq};
use crate::{Error, Result};

const ANALYSIS_PHASES: usize = 16;
const NODES: usize = 401;
const Z_MAX: f64 = 8.0;

/// Fringe contrast of a π/2 – delay – π/2 Ramsey experiment averaged over a
/// Gaussian carrier offset with standard deviation `sigma`.
///
/// The bright population is computed for each analysis phase as a weighted
/// average over offsets; the contrast is the amplitude of the fitted fringe.
pub fn ramsey_contrast(sigma: f64, delay: f64) -> Result<f64> {
    if !(sigma >= 0.0) || !(delay >= 0.0) || !sigma.is_finite() || !delay.is_finite() {
        return Err(Error::invalid("sigma and delay must be finite and >= 0"));
    }
    let h = 2.0 * Z_MAX / (NODES - 1) as f64;
    let nodes: Vec<(f64, f64)> = (0..NODES)
        .map(|j| {
            let z = -Z_MAX + j as f64 * h;
            let end = if j == 0 || j == NODES - 1 { 0.5 } else { 1.0 };
            (z * sigma, end * h * (-0.5 * z * z).exp() / (2.0 * PI).sqrt())
        })
        .collect();
    let mut design = Vec::with_capacity(ANALYSIS_PHASES);
    let mut fringe = Vec::with_capacity(ANALYSIS_PHASES);
    for k in 0..ANALYSIS_PHASES {
        let phi = 2.0 * PI * k as f64 / ANALYSIS_PHASES as f64;
        let p_bright: f64 = nodes.iter().map(|&(eps, w)| w * 0.5 * (1.0 + (eps * delay - phi).cos())).sum();
        design.push(vec![1.0, phi.cos(), phi.sin()]);
        fringe.push(p_bright);
    }
    let (coef, _) = weighted_lstsq(&design, &fringe, &[1.0; ANALYSIS_PHASES])
        .ok_or_else(|| Error::EstimationFailure("Ramsey fringe fit is singular".into()))?;
    Ok(2.0 * coef[1].hypot(coef[2]))
}

/// Finds the carrier noise level that reproduces `target_loss` = 1 − contrast
/// at the given Ramsey delay.
pub fn calibrate_noise(target_loss: f64, delay: f64) -> Result<f64> {
    if target_loss == 0.0 {
        return Ok(0.0);
    }
    if !(target_loss > 0.0 && target_loss < 0.5) {
        return Err(Error::invalid(format!("contrast loss must lie in (0, 0.5), got {target_loss}")));
    }
    if !(delay > 0.0) {
        return Err(Error::NoSolution("zero delay cannot lose contrast".into()));
    }
    // Gaussian dephasing gives exp(−σ²T²/2); bracket generously around it.
    let guess = (-2.0 * (1.0 - target_loss).ln()).sqrt() / delay;
    let loss = |s: f64| ramsey_contrast(s, delay).map(|c| 1.0 - c - target_loss);
    brent(loss, 0.0, 4.0 * guess, 1e-7 * guess, 200)
}
