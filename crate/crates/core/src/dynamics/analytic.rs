use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use super::GateParams;
use crate::{Error, Result};

/// Closed-form solution of the constant-envelope MS interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct MsReference {
    /// (t, α(t)) samples of the spin-dependent displacement over [0, τ].
    pub alpha: Vec<(f64, C64)>,
    /// Geometric phase Φ(τ) accumulated at the requested drive.
    pub geometric_phase: f64,
    /// Carrier Rabi frequency at which Φ(τ) = π/8 for the loop count below.
    pub ideal_rabi: f64,
    /// K = δm·τ / 2π.
    pub loops: f64,
    /// False when K is not an integer, i.e. the motion does not disentangle.
    pub loop_closed: bool,
}

/// Displacement α(t) = −(ηΩ/2)(e^{−iδm t} − 1)/δm.
pub fn displacement(t: f64, eta_omega: f64, delta_m: f64) -> C64 {
    -(0.5 * eta_omega) * (C64::from_polar(1.0, -delta_m * t) - 1.0) / delta_m
}

/// Reference for constant per-ion Rabi frequency `rabi` (before `rabi_scale`).
pub fn analytic_ms_reference(params: &GateParams, rabi: f64) -> Result<MsReference> {
    params.validate()?;
    if params.delta_m == 0.0 {
        return Err(Error::invalid("analytic reference needs delta_m != 0"));
    }
    let dm = params.delta_m;
    let eta_omega = params.eta_bm * rabi * params.rabi_scale;
    let loops = dm.abs() * params.tau / (2.0 * PI);
    let loop_closed = (loops - loops.round()).abs() < 1e-9 && loops.round() >= 1.0;
    let k = loops.max(f64::MIN_POSITIVE);
    let ideal_rabi = dm.abs() / (2.0 * k.sqrt()) / (params.eta_bm * params.rabi_scale.max(f64::MIN_POSITIVE));
    let n = 200;
    let alpha = (0..=n)
        .map(|j| {
            let t = params.tau * j as f64 / n as f64;
            (t, displacement(t, eta_omega, dm))
        })
        .collect();
    Ok(MsReference {
        alpha,
        geometric_phase: (0.5 * eta_omega).powi(2) * params.tau / dm,
        ideal_rabi,
        loops,
        loop_closed,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::params;
    use super::*;
    use crate::phys::khz;

    #[test]
    fn loop_closing_operating_point() {
        let r = analytic_ms_reference(&params(khz(12.5), 160e-6), 1.0).unwrap();
        assert!((r.loops - 2.0).abs() < 1e-12 && r.loop_closed);
        let f_khz = r.ideal_rabi / (2.0 * PI) / 1e3;
        assert!((f_khz - 105.2).abs() < 0.05, "{f_khz}");
        let at_ideal = analytic_ms_reference(&params(khz(12.5), 160e-6), r.ideal_rabi).unwrap();
        assert!((at_ideal.geometric_phase - PI / 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_loop_closes() {
        let dm = 2.0 * PI / 100e-6;
        let r = analytic_ms_reference(&params(dm, 100e-6), khz(80.0)).unwrap();
        assert!(r.alpha.last().unwrap().1.norm() < 1e-12);
        assert!(r.alpha[100].1.norm() > 0.1);
    }

    #[test]
    fn flags_open_loop() {
        let r = analytic_ms_reference(&params(khz(13.0), 160e-6), 1.0).unwrap();
        assert!(!r.loop_closed);
    }
}
