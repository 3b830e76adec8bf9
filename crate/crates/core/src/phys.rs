//! Physical constants and unit helpers.

use std::f64::consts::TAU;

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Mass of a singly ionised ⁴⁰Ca atom.
pub const CA40_ION_MASS: f64 = 39.962_590_86 * ATOMIC_MASS_UNIT - 9.109_383_7015e-31;

/// kHz (cycles) to rad/s.
pub fn khz(f: f64) -> f64 {
    TAU * 1e3 * f
}

/// rad/s to kHz (cycles).
pub fn to_khz(w: f64) -> f64 {
    w / (TAU * 1e3)
}

pub fn mhz(f: f64) -> f64 {
    TAU * 1e6 * f
}

pub fn to_mhz(w: f64) -> f64 {
    w / (TAU * 1e6)
}

pub const MICRON: f64 = 1e-6;
pub const MICROSECOND: f64 = 1e-6;

/// Equilibrium separation of two equal ions in a harmonic well of angular
/// frequency `omega_com`.
pub fn ion_spacing(omega_com: f64, mass: f64) -> f64 {
    let coulomb = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (2.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY);
    (coulomb / (mass * omega_com * omega_com)).cbrt()
}

/// Two equal ions: the stretch mode sits at √3 times the centre-of-mass mode.
pub fn breathing_mode(omega_com: f64) -> f64 {
    3f64.sqrt() * omega_com
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_at_operating_point() {
        // Coulomb balance: e²/(4πε₀ d²) = m ω² d/2
        let w = mhz(1.41);
        let d = ion_spacing(w, CA40_ION_MASS);
        let force = ELEMENTARY_CHARGE.powi(2) / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY * d * d);
        let restoring = CA40_ION_MASS * w * w * d / 2.0;
        assert!((force / restoring - 1.0).abs() < 1e-12);
        assert!((d / MICRON - 4.5).abs() < 0.1, "d = {} um", d / MICRON);
    }

    #[test]
    fn unit_round_trip() {
        assert!((to_khz(khz(12.5)) - 12.5).abs() < 1e-12);
        assert!((breathing_mode(mhz(1.41)) / mhz(2.4422) - 1.0).abs() < 1e-4);
    }
}
