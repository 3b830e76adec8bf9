//! Time-dependent Mølmer-Sørensen dynamics.
//!
//! In the interaction frame of the (Stark-shifted) spins and of the
//! breathing mode, with tones at `δb = ω_BM + δm + δg` and
//! `δr = −ω_BM − δm + δg` from the bare carrier,
//!
//! ```text
//! H(t) = Σ_i (g_i(t) σ⁺_i + h.c.) ⊗ (a† e^{−iδm t} + a e^{iδm t})
//! g_i(t) = ±(η/2) s Ω_i(t) e^{i(φ − θ(t))},   θ(t) = ∫₀ᵗ (δg + δ_D − s²Δ_S) dt'
//! ```
//!
//! with `+` for ion 1 and `−` for ion 2 (breathing-mode participation) and
//! `s` the global power scale. For constant envelopes θ(t) = (δg − Δ_S)t and
//! this is exactly the textbook two-tone MS Hamiltonian.
//!
//! [`propagate`] returns states in the frame of the laser tones, i.e. after
//! undoing the spin rotation θ(τ). That is the frame the analysis pulse and
//! the target Bell state are defined in, and it is where a quasi-static
//! carrier error becomes visible as dephasing.

mod analytic;
mod envelope;
mod integrator;
mod noise;
pub mod oracle;
mod shots;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::qcore::{Operator, OperatorSet, QuantumState};
use crate::{Error, Result};

pub use analytic::{analytic_ms_reference, MsReference};
pub use envelope::{EnvSample, EnvelopeSet};
pub use integrator::{dopri5, StepControl, Stats};
pub use noise::{calibrate_noise, ramsey_contrast};
pub use shots::{run_shots, GateSetup, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Interaction duration (s).
    pub tau: f64,
    /// Mode detuning δm (rad/s).
    pub delta_m: f64,
    /// Global detuning δg (rad/s).
    pub delta_g: f64,
    /// Breathing-mode frequency (rad/s).
    pub omega_bm: f64,
    /// Breathing-mode Lamb-Dicke parameter.
    pub eta_bm: f64,
    /// Phase of the spin-dependent force at t = 0 (rad).
    pub spin_phase: f64,
    /// Global amplitude scale on both tones. Stark shifts scale with its square.
    pub rabi_scale: f64,
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.eta_bm > 0.0 && self.eta_bm < 0.3) {
            return Err(Error::invalid(format!("eta_bm must lie in (0, 0.3), got {}", self.eta_bm)));
        }
        if !(self.omega_bm > self.delta_m.abs() + self.delta_g.abs()) {
            return Err(Error::invalid("omega_bm must exceed |delta_m| + |delta_g|"));
        }
        if !(self.rabi_scale >= 0.0) || !self.rabi_scale.is_finite() {
            return Err(Error::invalid(format!("rabi_scale must be finite and >= 0, got {}", self.rabi_scale)));
        }
        if !self.delta_m.is_finite() || !self.delta_g.is_finite() || !self.spin_phase.is_finite() {
            return Err(Error::invalid("non-finite detuning or phase"));
        }
        Ok(())
    }

    /// Blue tone detuning from the bare carrier.
    pub fn blue_detuning(&self) -> f64 {
        self.omega_bm + self.delta_m + self.delta_g
    }

    /// Red tone detuning from the bare carrier.
    pub fn red_detuning(&self) -> f64 {
        -self.omega_bm - self.delta_m + self.delta_g
    }
}

/// Time-dependent coefficients of the Hamiltonian at one instant.
#[derive(Debug, Clone, Copy)]
struct Coupling {
    g1: C64,
    g2: C64,
    /// e^{−iδm t}, multiplies a†.
    up: C64,
}

fn coupling(t: f64, params: &GateParams, env: &EnvelopeSet, frame_phase: bool) -> Coupling {
    let s = env.sample(t);
    let scale = params.rabi_scale;
    let theta = if frame_phase { detuning_phase(t, params, &s) } else { 0.0 };
    let rot = C64::from_polar(0.5 * params.eta_bm * scale, params.spin_phase - theta);
    Coupling {
        g1: rot * s.omega_1,
        g2: -rot * s.omega_2,
        up: C64::from_polar(1.0, -params.delta_m * t),
    }
}

/// Accumulated spin-frame phase θ(t).
fn detuning_phase(t: f64, params: &GateParams, s: &EnvSample) -> f64 {
    params.delta_g * t + s.int_doppler - params.rabi_scale * params.rabi_scale * s.int_stark
}

/// Instantaneous spin-frame detuning δ(t) = δg + δ_D(t) − s²Δ_S(t).
pub fn instantaneous_detuning(t: f64, params: &GateParams, env: &EnvelopeSet) -> f64 {
    let s = env.sample(t);
    params.delta_g + s.doppler - params.rabi_scale * params.rabi_scale * s.stark
}

/// Dense interaction-frame Hamiltonian at time `t`.
pub fn ms_hamiltonian(ops: &OperatorSet, t: f64, params: &GateParams, env: &EnvelopeSet) -> Result<Operator> {
    check_time(t, params.tau)?;
    let c = coupling(t, params, env, true);
    let motion = &ops.a_dagger * c.up + &ops.a * c.up.conj();
    let spin = &ops.sigma_plus_1 * c.g1 + &ops.sigma_minus_1 * c.g1.conj() + &ops.sigma_plus_2 * c.g2
        + &ops.sigma_minus_2 * c.g2.conj();
    Ok(spin * motion)
}

fn check_time(t: f64, tau: f64) -> Result<()> {
    let slack = 1e-12 * tau;
    if !(t >= -slack && t <= tau + slack) {
        return Err(Error::OutOfRange { t, tau });
    }
    Ok(())
}

/// `out = −i H(t) ψ` using the spin ⊗ motion factorisation; O(dim) per call.
fn apply_generator(c: &Coupling, mode_dim: usize, sqrt_n: &[f64], psi: &[C64], motion: &mut [C64], out: &mut [C64]) {
    let m = mode_dim;
    let down = c.up.conj();
    for block in 0..4 {
        let src = &psi[block * m..(block + 1) * m];
        let dst = &mut motion[block * m..(block + 1) * m];
        for n in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            if n > 0 {
                acc += c.up * sqrt_n[n] * src[n - 1];
            }
            if n + 1 < m {
                acc += down * sqrt_n[n + 1] * src[n + 1];
            }
            dst[n] = acc;
        }
    }
    let minus_i = C64::new(0.0, -1.0);
    let (g1, g2) = (c.g1, c.g2);
    let (g1c, g2c) = (g1.conj(), g2.conj());
    // blocks: 0 = SS, 1 = SD, 2 = DS, 3 = DD
    for n in 0..m {
        let y = [motion[n], motion[m + n], motion[2 * m + n], motion[3 * m + n]];
        out[n] = minus_i * (g1c * y[2] + g2c * y[1]);
        out[m + n] = minus_i * (g1c * y[3] + g2 * y[0]);
        out[2 * m + n] = minus_i * (g1 * y[0] + g2c * y[3]);
        out[3 * m + n] = minus_i * (g1 * y[1] + g2 * y[2]);
    }
}

/// Step control derived from a target accuracy on the final state vector.
fn step_control(tol: f64) -> StepControl {
    StepControl { rtol: tol * 0.05, atol: tol * 0.05, max_steps: 2_000_000, min_step_fraction: 1e-13 }
}

/// Solves the Schrödinger equation over `[0, τ]` and returns the final state
/// in the laser-tone frame.
pub fn propagate(state: &QuantumState, params: &GateParams, env: &EnvelopeSet, tol: f64) -> Result<QuantumState> {
    Ok(propagate_with_stats(state, params, env, tol)?.0)
}

pub fn propagate_with_stats(
    state: &QuantumState,
    params: &GateParams,
    env: &EnvelopeSet,
    tol: f64,
) -> Result<(QuantumState, Stats)> {
    params.validate()?;
    if !(tol > 1e-12 && tol < 1e-4) {
        return Err(Error::invalid(format!("tolerance must lie in (1e-12, 1e-4), got {tol:e}")));
    }
    env.check_covers(params.tau)?;
    let spec = state.spec();
    let m = spec.mode_dim();
    let sqrt_n: Vec<f64> = (0..m).map(|n| (n as f64).sqrt()).collect();
    let mut psi = state.amplitudes().to_vec();
    let norm0 = state.norm();
    if (norm0 - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("input state not normalised (norm {norm0})")));
    }

    let mut motion = vec![C64::new(0.0, 0.0); spec.dim()];
    let stats = if params.rabi_scale == 0.0 {
        Stats::default()
    } else {
        dopri5(
            |t, y, dy| {
                let c = coupling(t, params, env, true);
                apply_generator(&c, m, &sqrt_n, y, &mut motion, dy);
            },
            |y| {
                let n = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                y.iter_mut().for_each(|c| *c /= n);
                1.0 / n
            },
            0.0,
            params.tau,
            &mut psi,
            step_control(tol),
        )?
    };

    let theta = detuning_phase(params.tau, params, &env.sample(params.tau));
    for (i, c) in psi.iter_mut().enumerate() {
        let dark = spec.dark_count(i);
        if dark > 0 {
            *c *= C64::from_polar(1.0, theta * dark as f64);
        }
    }
    let mut out = QuantumState::from_amplitudes(spec, psi)?;
    out.normalize()?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::khz;
    use crate::qcore::{build_space, overlap_fidelity, populations, Spin, SpinState};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn params(delta_m: f64, tau: f64) -> GateParams {
        GateParams {
            tau,
            delta_m,
            delta_g: 0.0,
            omega_bm: crate::phys::mhz(2.45),
            eta_bm: 0.042,
            spin_phase: std::f64::consts::FRAC_PI_2,
            rabi_scale: 1.0,
        }
    }

    fn max_abs(m: &Operator) -> f64 {
        m.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_drive_is_zero_operator() {
        let (_, ops) = build_space(4).unwrap();
        let env = EnvelopeSet::constant(160e-6, 0.0, 0.0, 0.0).unwrap();
        let h = ms_hamiltonian(&ops, 50e-6, &params(khz(12.5), 160e-6), &env).unwrap();
        assert_eq!(max_abs(&h), 0.0);
    }

    #[test]
    fn reduces_to_static_form_at_t0() {
        let (_, ops) = build_space(5).unwrap();
        let omega = khz(100.0);
        let stark = khz(3.0);
        let env = EnvelopeSet::constant(160e-6, omega, omega, stark).unwrap();
        let mut p = params(khz(12.5), 160e-6);
        p.delta_g = stark;
        p.spin_phase = 0.0;
        let h = ms_hamiltonian(&ops, 0.0, &p, &env).unwrap();
        let pref = C64::new(0.5 * 0.042 * omega, 0.0);
        let x = &ops.a_dagger + &ops.a;
        let sp = &ops.sigma_plus_1 - &ops.sigma_plus_2;
        let half = &sp * &x * pref;
        let expect = &half + half.adjoint();
        assert!(max_abs(&(h - expect)) < 1e-9 * omega);
    }

    #[test]
    fn hermitian_for_random_draws() {
        let (_, ops) = build_space(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let tau = 100e-6;
            let env = EnvelopeSet::constant(
                tau,
                khz(rng.random_range(0.0..200.0)),
                khz(rng.random_range(0.0..200.0)),
                khz(rng.random_range(-5.0..5.0)),
            )
            .unwrap();
            let mut p = params(khz(rng.random_range(-30.0..30.0)), tau);
            p.delta_g = khz(rng.random_range(-5.0..5.0));
            p.spin_phase = rng.random_range(0.0..6.3);
            let t = rng.random_range(0.0..tau);
            let h = ms_hamiltonian(&ops, t, &p, &env).unwrap();
            let scale = max_abs(&h).max(1.0);
            assert!(max_abs(&(&h - h.adjoint())) / scale < 1e-12);
        }
    }

    #[test]
    fn rejects_time_outside_window() {
        let (_, ops) = build_space(3).unwrap();
        let env = EnvelopeSet::constant(10e-6, 1.0, 1.0, 0.0).unwrap();
        let r = ms_hamiltonian(&ops, 11e-6, &params(khz(10.0), 10e-6), &env);
        assert!(matches!(r, Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn structured_generator_matches_dense_hamiltonian() {
        let (spec, ops) = build_space(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let env = EnvelopeSet::constant(80e-6, khz(90.0), khz(70.0), khz(1.0)).unwrap();
        let mut p = params(khz(-8.0), 80e-6);
        p.delta_g = khz(0.4);
        let psi: Vec<C64> = (0..spec.dim()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let t = 33e-6;
        let h = ms_hamiltonian(&ops, t, &p, &env).unwrap();
        let dense = &h * nalgebra::DVector::from_vec(psi.clone()) * C64::new(0.0, -1.0);
        let mut out = vec![C64::new(0.0, 0.0); spec.dim()];
        let mut scratch = out.clone();
        let sqrt_n: Vec<f64> = (0..spec.mode_dim()).map(|n| (n as f64).sqrt()).collect();
        apply_generator(&coupling(t, &p, &env, true), spec.mode_dim(), &sqrt_n, &psi, &mut scratch, &mut out);
        for (a, b) in out.iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn zero_drive_leaves_state_unchanged() {
        let (spec, _) = build_space(6).unwrap();
        let st = QuantumState::basis(spec, Spin::S, Spin::D, 2);
        let env = EnvelopeSet::constant(160e-6, 0.0, 0.0, 0.0).unwrap();
        let out = propagate(&st, &params(khz(12.5), 160e-6), &env, 1e-9).unwrap();
        assert!(out.max_distance(&st) < 1e-12);
    }

    #[test]
    fn stationary_gate_makes_bell_state() {
        let (spec, _) = build_space(15).unwrap();
        let dm = khz(12.5);
        let omega = dm / (2.0 * 2f64.sqrt() * 0.042);
        let env = EnvelopeSet::constant(160e-6, omega, omega, 0.0).unwrap();
        let st = QuantumState::basis(spec, Spin::S, Spin::S, 0);
        let out = propagate(&st, &params(dm, 160e-6), &env, 1e-9).unwrap();
        let p = populations(&out);
        assert!((p.p0 - 0.5).abs() < 1e-3 && p.p1 < 1e-3 && (p.p2 - 0.5).abs() < 1e-3, "{p:?}");
        assert!(overlap_fidelity(&out, &SpinState::bell_target()) > 0.9999);
        assert!((out.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let (spec, _) = build_space(3).unwrap();
        let env = EnvelopeSet::constant(1e-6, 1.0, 1.0, 0.0).unwrap();
        let st = QuantumState::basis(spec, Spin::S, Spin::S, 0);
        assert!(propagate(&st, &params(khz(10.0), 1e-6), &env, 1e-3).is_err());
    }
}
