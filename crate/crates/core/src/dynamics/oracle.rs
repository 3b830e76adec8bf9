//! Brute-force reference propagation.
//!
//! Works directly in the laser-tone frame, where the spins carry an explicit
//! detuning term instead of the rotating phase θ(t):
//!
//! ```text
//! H_L(t) = −δ(t)·(n_D1 + n_D2) + Σ_i (g⁰_i σ⁺_i + h.c.) ⊗ (a† e^{−iδm t} + a e^{iδm t})
//! ```
//!
//! The Hamiltonian is assembled from the dense [`OperatorSet`] and held
//! constant over each step at its midpoint value. Each step applies the
//! matrix exponential through its Taylor series, summed until the terms
//! fall below machine precision.

use nalgebra::DVector;
use num_complex::Complex64 as C64;

use super::{instantaneous_detuning, EnvelopeSet, GateParams};
use crate::qcore::{Operator, OperatorSet, QuantumState};
use crate::{Error, Result};

/// Fixed dense products from which `H_L(t)` is assembled at each step.
struct LaserFrameTerms {
    /// σ⁺₁a†, σ⁺₁a, σ⁺₂a†, σ⁺₂a
    raising: [Operator; 4],
    n_dark: Operator,
}

impl LaserFrameTerms {
    fn new(ops: &OperatorSet) -> Self {
        LaserFrameTerms {
            raising: [
                &ops.sigma_plus_1 * &ops.a_dagger,
                &ops.sigma_plus_1 * &ops.a,
                &ops.sigma_plus_2 * &ops.a_dagger,
                &ops.sigma_plus_2 * &ops.a,
            ],
            n_dark: &ops.sigma_plus_1 * &ops.sigma_minus_1 + &ops.sigma_plus_2 * &ops.sigma_minus_2,
        }
    }

    fn hamiltonian(&self, t: f64, params: &GateParams, env: &EnvelopeSet) -> Operator {
        let s = env.sample(t);
        let delta = instantaneous_detuning(t, params, env);
        let rot = C64::from_polar(0.5 * params.eta_bm * params.rabi_scale, params.spin_phase);
        let g1 = rot * s.omega_1;
        let g2 = -rot * s.omega_2;
        let up = C64::from_polar(1.0, -params.delta_m * t);
        let coef = [g1 * up, g1 * up.conj(), g2 * up, g2 * up.conj()];
        let mut half = &self.n_dark * C64::new(-0.5 * delta, 0.0);
        for (c, m) in coef.iter().zip(&self.raising) {
            half += m * *c;
        }
        half.adjoint() + half
    }
}

/// `exp(−i H dt) ψ` by Taylor summation.
pub fn expm_action(h: &Operator, dt: f64, psi: &DVector<C64>) -> DVector<C64> {
    let mut term = psi.clone();
    let mut acc = psi.clone();
    let factor = C64::new(0.0, -dt);
    for k in 1..60 {
        term = (h * &term) * (factor / k as f64);
        acc += &term;
        if term.iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-18 * acc.iter().map(|c| c.norm()).fold(0.0, f64::max) {
            break;
        }
    }
    acc
}

/// Piecewise-constant propagation with fixed step `dt`.
pub fn piecewise_exponential(
    ops: &OperatorSet,
    state: &QuantumState,
    params: &GateParams,
    env: &EnvelopeSet,
    dt: f64,
) -> Result<QuantumState> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::invalid("oracle step must be positive"));
    }
    let steps = (params.tau / dt).round().max(1.0) as usize;
    let h = params.tau / steps as f64;
    let terms = LaserFrameTerms::new(ops);
    let mut psi = DVector::from_column_slice(state.amplitudes());
    for k in 0..steps {
        let t_mid = (k as f64 + 0.5) * h;
        let hm = terms.hamiltonian(t_mid, params, env);
        psi = expm_action(&hm, h, &psi);
    }
    QuantumState::from_amplitudes(state.spec(), psi.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_action_matches_nalgebra_expm() {
        let (spec, ops) = crate::qcore::build_space(3).unwrap();
        let h = (&ops.a + &ops.a_dagger) * C64::new(1.3, 0.0) + &ops.sigma_plus_1 * C64::new(0.2, 0.7)
            + &ops.sigma_minus_1 * C64::new(0.2, -0.7);
        let psi = DVector::from_fn(spec.dim(), |i, _| C64::new((i as f64).cos(), (i as f64 * 0.3).sin()));
        let dt = 0.37;
        let exact = (h.clone() * C64::new(0.0, -dt)).exp() * &psi;
        let approx = expm_action(&h, dt, &psi);
        assert!((exact - approx).iter().all(|c| c.norm() < 1e-12));
    }
}
