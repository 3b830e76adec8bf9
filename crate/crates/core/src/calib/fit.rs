//! Single-Gaussian dip fit with a residual test for multi-peaked spectra.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `y = baseline − depth·exp(−(x − center)²/2width²)`, x in kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDip {
    pub baseline: f64,
    pub depth: f64,
    pub center: f64,
    pub width: f64,
    /// 1σ uncertainty of the centre from the fit covariance.
    pub center_sigma: f64,
    /// RMS of the fit residuals.
    pub rms_residual: f64,
}

impl GaussianDip {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.width;
        self.baseline - self.depth * (-0.5 * u * u).exp()
    }
}

struct DipProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: Vector4<f64>,
}

impl LeastSquaresProblem<f64, Dyn, nalgebra::U4> for DipProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, nalgebra::U4>;
    type ParameterStorage = Owned<f64, nalgebra::U4>;

    fn set_params(&mut self, p: &Vector4<f64>) {
        self.p = *p;
    }

    fn params(&self) -> Vector4<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [b, a, c, w] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        Some(DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(self.y).map(|(x, y)| {
                let u = (x - c) / w;
                b - a * (-0.5 * u * u).exp() - y
            }),
        ))
    }

    fn jacobian(&self) -> Option<nalgebra::OMatrix<f64, Dyn, nalgebra::U4>> {
        let [_, a, c, w] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        let mut j = nalgebra::OMatrix::<f64, Dyn, nalgebra::U4>::zeros(self.x.len());
        for (i, x) in self.x.iter().enumerate() {
            let u = (x - c) / w;
            let g = (-0.5 * u * u).exp();
            j[(i, 0)] = 1.0;
            j[(i, 1)] = -g;
            j[(i, 2)] = -a * g * u / w;
            j[(i, 3)] = -a * g * u * u / w;
        }
        Some(j)
    }
}

/// Least-squares Gaussian dip fit; `x` in kHz.
///
/// The fit starts from the deepest point. It fails when the optimiser does
/// not converge or the centre leaves the scanned range.
pub fn fit_gaussian_dip(x: &[f64], y: &[f64], width_guess: f64) -> Result<GaussianDip> {
    if x.len() != y.len() || x.len() < 5 {
        return Err(Error::invalid("a dip fit needs at least five points of matching length"));
    }
    let (imin, ymin) = y.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = Vector4::new(ymax, (ymax - ymin).max(1e-6), x[imin], width_guess);
    let (done, report) = LevenbergMarquardt::new().minimize(DipProblem { x, y, p: start });
    let p = done.p;
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !report.termination.was_successful() || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::CalibrationFailure(format!("dip fit did not converge: {:?}", report.termination)));
    }
    if !(p[2] >= lo && p[2] <= hi) || p[1] <= 0.0 {
        return Err(Error::CalibrationFailure(format!("fitted dip centre {:.3} kHz outside scan or inverted", p[2])));
    }
    let res = done.residuals().expect("residuals are always defined");
    let n = x.len() as f64;
    let ssr = res.norm_squared();
    let dof = (n - 4.0).max(1.0);
    let jac = done.jacobian().expect("jacobian is always defined");
    let jtj: DMatrix<f64> = DMatrix::from_iterator(4, 4, (jac.transpose() * &jac).iter().cloned());
    let center_sigma = jtj.try_inverse().map(|inv| (inv[(2, 2)] * ssr / dof).max(0.0).sqrt()).unwrap_or(f64::INFINITY);
    Ok(GaussianDip {
        baseline: p[0],
        depth: p[1],
        center: p[2],
        width: p[3].abs(),
        center_sigma,
        rms_residual: (ssr / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..81).map(|k| 400.0 + 2.0 * k as f64).collect()
    }

    #[test]
    fn recovers_exact_gaussian() {
        let truth = GaussianDip { baseline: 1.0, depth: 0.8, center: 483.7, width: 9.0, center_sigma: 0.0, rms_residual: 0.0 };
        let x = grid();
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let f = fit_gaussian_dip(&x, &y, 15.0).unwrap();
        assert!((f.center - 483.7).abs() < 1e-6);
        assert!((f.width - 9.0).abs() < 1e-6);
        assert!(f.rms_residual < 1e-9);
    }

    #[test]
    fn two_dips_leave_large_residual() {
        let a = GaussianDip { baseline: 1.0, depth: 0.5, center: 450.0, width: 5.0, center_sigma: 0.0, rms_residual: 0.0 };
        let b = GaussianDip { center: 520.0, ..a };
        let x = grid();
        let y: Vec<f64> = x.iter().map(|&v| a.eval(v) + b.eval(v) - 1.0).collect();
        let f = fit_gaussian_dip(&x, &y, 15.0).unwrap();
        assert!(f.rms_residual > 0.05, "{}", f.rms_residual);
    }

    #[test]
    fn flat_data_fails() {
        let x = grid();
        let y = vec![1.0; x.len()];
        assert!(fit_gaussian_dip(&x, &y, 10.0).is_err());
    }
}
