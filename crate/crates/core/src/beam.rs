//! Gaussian beam crossing: per-ion Rabi, Stark and Doppler envelopes.
//!
//! Sign convention: an ion moving at velocity `v` sees a tone of lab offset
//! `Δ` at `Δ − δ_D(v)`, and its transition is light-shifted up by `Δ_S`. A
//! carrier probe is therefore resonant at `Δ = δ_D + Δ_S`, and gate tones that
//! carry a Doppler reference `D_ref` leave a residual `D_ref − δ_D(t)` that acts
//! exactly like an extra global detuning.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::EnvelopeSet;
use crate::phys::{khz, MICRON};
use crate::trap::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamModel {
    /// Wavelength (m).
    pub wavelength: f64,
    /// Angle between beam and trap axis (rad).
    pub axis_angle: f64,
    /// 1/e² intensity waist radius (m).
    pub waist: f64,
    /// Beam centre on the trap axis (m).
    pub center: f64,
    /// Carrier Rabi frequency at the beam centre at unit power (rad/s).
    pub peak_rabi: f64,
    /// Light-shift coefficient κ in Δ_S = κΩ² (s).
    pub stark_coeff: f64,
}

impl Default for BeamModel {
    fn default() -> Self {
        BeamModel {
            wavelength: 729e-9,
            axis_angle: PI / 4.0,
            waist: 15.0 * MICRON,
            center: 0.0,
            peak_rabi: khz(100.0),
            stark_coeff: 2.8e-8,
        }
    }
}

impl BeamModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.waist > 0.0) || !(self.wavelength > 0.0) || !(self.stark_coeff >= 0.0) || !(self.peak_rabi >= 0.0) {
            return Err(Error::invalid("beam needs positive waist and wavelength and non-negative Rabi and kappa"));
        }
        if !(self.axis_angle.cos() > 1e-6) {
            return Err(Error::invalid("beam must not be perpendicular to the trap axis"));
        }
        Ok(())
    }

    /// Waist projected onto the trap axis.
    pub fn axial_waist(&self) -> f64 {
        self.waist / self.axis_angle.cos()
    }

    /// Field envelope at axial position `x`, 1 at the beam centre.
    pub fn field(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.axial_waist();
        (-u * u).exp()
    }

    pub fn rabi_at(&self, x: f64) -> f64 {
        self.peak_rabi * self.field(x)
    }

    /// δ_D = (2π/λ)·cos(angle)·v.
    pub fn doppler_shift(&self, v: f64) -> f64 {
        2.0 * PI / self.wavelength * self.axis_angle.cos() * v
    }

    /// Velocity that produces Doppler shift `d`.
    pub fn velocity_for(&self, d: f64) -> f64 {
        d / (2.0 * PI / self.wavelength * self.axis_angle.cos())
    }

    pub fn stark(&self, omega_1: f64, omega_2: f64) -> f64 {
        0.5 * self.stark_coeff * (omega_1 * omega_1 + omega_2 * omega_2)
    }
}

/// Rabi frequencies of the two ions (at `x ∓ d/2`) along the trajectory.
pub fn rabi_envelopes(traj: &Trajectory, beam: &BeamModel, ion_spacing: f64, rabi_scale: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * ion_spacing;
    let o1 = traj.x.iter().map(|x| rabi_scale * beam.rabi_at(x - half)).collect();
    let o2 = traj.x.iter().map(|x| rabi_scale * beam.rabi_at(x + half)).collect();
    (o1, o2)
}

/// Δ_S(t) = κ(Ω₁² + Ω₂²)/2.
pub fn stark_envelope(omega_1: &[f64], omega_2: &[f64], beam: &BeamModel) -> Vec<f64> {
    omega_1.iter().zip(omega_2).map(|(a, b)| beam.stark(*a, *b)).collect()
}

pub fn doppler_envelope(traj: &Trajectory, beam: &BeamModel) -> Vec<f64> {
    traj.v.iter().map(|&v| beam.doppler_shift(v)).collect()
}

/// Gate envelopes along a transport at unit power.
///
/// The Doppler column holds `doppler_reference − δ_D(t)`. The trajectory is
/// subsampled to every `stride`-th point (the last point is always kept).
pub fn transport_envelopes(
    traj: &Trajectory,
    beam: &BeamModel,
    ion_spacing: f64,
    doppler_reference: f64,
    stride: usize,
) -> Result<EnvelopeSet> {
    beam.validate()?;
    if traj.len() < 2 || stride == 0 {
        return Err(Error::invalid("trajectory too short or zero stride"));
    }
    let (o1, o2) = rabi_envelopes(traj, beam, ion_spacing, 1.0);
    let stark = stark_envelope(&o1, &o2, beam);
    let dop = doppler_envelope(traj, beam);
    let mut idx: Vec<usize> = (0..traj.len()).step_by(stride).collect();
    if *idx.last().unwrap() != traj.len() - 1 {
        idx.push(traj.len() - 1);
    }
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    EnvelopeSet::new(
        pick(&traj.times),
        pick(&o1),
        pick(&o2),
        pick(&stark),
        idx.iter().map(|&i| doppler_reference - dop[i]).collect(),
    )
}

/// Constant envelopes for ions held in a static well centred at `x`.
pub fn stationary_envelopes(beam: &BeamModel, x: f64, ion_spacing: f64, tau: f64) -> Result<EnvelopeSet> {
    beam.validate()?;
    let o1 = beam.rabi_at(x - 0.5 * ion_spacing);
    let o2 = beam.rabi_at(x + 0.5 * ion_spacing);
    EnvelopeSet::constant(tau, o1, o2, beam.stark(o1, o2))
}
