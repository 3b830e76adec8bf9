//! Synthetic one-dimensional electrode plant.
//!
//! Each electrode contributes a Gaussian bump `c·exp(−(x − x_i)²/2σ²)` of
//! electric potential per applied volt. Keyframes are solved on the ideal
//! basis; the plant can add per-electrode gain errors, a sinusoidal stray
//! potential and a first-order electrode filter, none of which the solver
//! knows about.

mod trajectory;
mod waveform;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::numeric::brent;
use crate::phys::{CA40_ION_MASS, ELEMENTARY_CHARGE, MICRON};
use crate::{Error, Result};

pub use trajectory::{extract_trajectory, Trajectory};
pub use waveform::{
    apply_confinement_scaling, retime_segments, synthesize_waveform, Keyframe, Segment, Waveform, SAMPLE_PERIOD,
};

pub const VOLTAGE_LIMIT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imperfections {
    /// Multiplicative gain per electrode (1 = ideal).
    pub gains: Vec<f64>,
    /// Stray potential amplitude (V).
    pub stray_amplitude: f64,
    /// Stray potential period along the axis (m).
    pub stray_wavelength: f64,
    pub stray_phase: f64,
    /// Electrode filter time constant (s); 0 disables the filter.
    pub filter_tau: f64,
}

impl Imperfections {
    pub fn none(n_electrodes: usize) -> Self {
        Imperfections {
            gains: vec![1.0; n_electrodes],
            stray_amplitude: 0.0,
            stray_wavelength: 160.0 * MICRON,
            stray_phase: 0.0,
            filter_tau: 0.0,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.gains.iter().all(|&g| g == 1.0) && self.stray_amplitude == 0.0 && self.filter_tau == 0.0
    }
}

/// Sinusoidal gain ripple over electrode positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRipple {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    /// Electrode centres (m).
    pub centers: Vec<f64>,
    /// Bump width σ (m).
    pub width: f64,
    /// Peak potential per applied volt (dimensionless).
    pub coupling: f64,
    pub mass: f64,
    pub imperfections: Imperfections,
}

/// Location and curvature frequency of a potential minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub x: f64,
    pub omega: f64,
}

impl TrapModel {
    /// Electrodes on a regular pitch, symmetric about x = 0.
    pub fn uniform(n_electrodes: usize, pitch: f64, width: f64, coupling: f64) -> Result<Self> {
        if n_electrodes < 3 || !(pitch > 0.0) || !(width > 0.0) || !(coupling > 0.0) {
            return Err(Error::invalid("need >= 3 electrodes and positive pitch, width and coupling"));
        }
        let mid = (n_electrodes - 1) as f64 / 2.0;
        let centers = (0..n_electrodes).map(|i| (i as f64 - mid) * pitch).collect();
        Ok(TrapModel {
            centers,
            width,
            coupling,
            mass: CA40_ION_MASS,
            imperfections: Imperfections::none(n_electrodes),
        })
    }

    /// 15 electrodes on a 60 µm pitch with no imperfections.
    pub fn ideal_default() -> Self {
        TrapModel::uniform(15, 60.0 * MICRON, 36.0 * MICRON, 0.02).expect("default trap parameters are valid")
    }

    pub fn n_electrodes(&self) -> usize {
        self.centers.len()
    }

    /// Copy of this trap with all imperfections removed.
    pub fn ideal(&self) -> Self {
        TrapModel { imperfections: Imperfections::none(self.n_electrodes()), ..self.clone() }
    }

    pub fn with_imperfections(&self, imp: Imperfections) -> Result<Self> {
        if imp.gains.len() != self.n_electrodes() {
            return Err(Error::invalid("one gain per electrode required"));
        }
        if imp.gains.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid("electrode gains must be finite and positive"));
        }
        if !(imp.filter_tau >= 0.0) || !(imp.stray_wavelength > 0.0) || !imp.stray_amplitude.is_finite() {
            return Err(Error::invalid("invalid stray field or filter parameters"));
        }
        Ok(TrapModel { imperfections: imp, ..self.clone() })
    }

    pub fn gain_ripple(&self, ripple: &GainRipple) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| 1.0 + ripple.amplitude * (2.0 * std::f64::consts::PI * c / ripple.period + ripple.phase).sin())
            .collect()
    }

    /// Curvature per unit voltage: m ω² / e is the electric-potential curvature.
    pub fn curvature_target(&self, omega: f64) -> f64 {
        self.mass * omega * omega / ELEMENTARY_CHARGE
    }

    /// Basis function and its first two derivatives for electrode `i`.
    fn basis(&self, i: usize, x: f64) -> (f64, f64, f64) {
        let s2 = self.width * self.width;
        let u = x - self.centers[i];
        let f = self.coupling * (-0.5 * u * u / s2).exp();
        (f, -u / s2 * f, (u * u / s2 - 1.0) / s2 * f)
    }

    fn basis3(&self, i: usize, x: f64) -> (f64, f64, f64, f64) {
        let (f, b1, b2) = self.basis(i, x);
        let s2 = self.width * self.width;
        let u = x - self.centers[i];
        (f, b1, b2, (3.0 * u / (s2 * s2) - u * u * u / (s2 * s2 * s2)) * f)
    }

    /// Potential derivatives (Φ', Φ'') at `x`, with or without imperfections.
    pub fn potential_derivatives(&self, volts: &[f64], x: f64, perturbed: bool) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let cutoff = 8.0 * self.width;
        for (i, v) in volts.iter().enumerate() {
            if (x - self.centers[i]).abs() > cutoff {
                continue;
            }
            let (_, b1, b2) = self.basis(i, x);
            let g = if perturbed { self.imperfections.gains[i] } else { 1.0 };
            d1 += g * v * b1;
            d2 += g * v * b2;
        }
        if perturbed && self.imperfections.stray_amplitude != 0.0 {
            let imp = &self.imperfections;
            let k = 2.0 * std::f64::consts::PI / imp.stray_wavelength;
            let arg = k * x + imp.stray_phase;
            d1 += imp.stray_amplitude * k * arg.cos();
            d2 -= imp.stray_amplitude * k * k * arg.sin();
        }
        (d1, d2)
    }

    /// Electric potential at `x` (V), used for diagnostics and tests.
    pub fn potential(&self, volts: &[f64], x: f64, perturbed: bool) -> f64 {
        let mut p: f64 = volts
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let g = if perturbed { self.imperfections.gains[i] } else { 1.0 };
                g * v * self.basis(i, x).0
            })
            .sum();
        if perturbed {
            let imp = &self.imperfections;
            p += imp.stray_amplitude * (2.0 * std::f64::consts::PI * x / imp.stray_wavelength + imp.stray_phase).sin();
        }
        p
    }

    /// Newton search for the potential minimum nearest `guess`.
    pub fn find_well(&self, volts: &[f64], guess: f64, perturbed: bool) -> Result<Well> {
        let mut x = guess;
        for _ in 0..60 {
            let (d1, d2) = self.potential_derivatives(volts, x, perturbed);
            if !(d2 > 0.0) {
                return Err(Error::NoSolution(format!("no confining curvature near x = {:.3} um", x / MICRON)));
            }
            let step = (d1 / d2).clamp(-2.0 * MICRON, 2.0 * MICRON);
            x -= step;
            if step.abs() < 1e-13 {
                let (_, d2) = self.potential_derivatives(volts, x, perturbed);
                return Ok(Well { x, omega: (ELEMENTARY_CHARGE * d2 / self.mass).sqrt() });
            }
        }
        Err(Error::NoSolution("well search did not converge".into()))
    }

    fn coverage(&self) -> (f64, f64) {
        (self.centers[0], *self.centers.last().unwrap())
    }
}

/// Minimum-norm electrode voltages for a harmonic well at `x0` with COM
/// frequency `omega`, computed on the ideal basis: zero slope, the target
/// curvature and zero cubic term at `x0`.
///
/// Electrodes that would exceed the ±12 V limit are pinned at the limit and
/// the remaining ones re-solved.
pub fn solve_keyframe(trap: &TrapModel, x0: f64, omega: f64) -> Result<Vec<f64>> {
    let infeasible = |reason: String| Error::InfeasibleKeyframe { x_um: x0 / MICRON, reason };
    let (lo, hi) = trap.coverage();
    if !(x0 >= lo && x0 <= hi) {
        return Err(infeasible("position outside electrode coverage".into()));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(infeasible(format!("target frequency must be positive, got {omega}")));
    }
    let n = trap.n_electrodes();
    // columns scaled by powers of the width for conditioning
    let w = trap.width;
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (_, b1, b2, b3) = trap.basis3(i, x0);
            [b1 * w, b2 * w * w, b3 * w * w * w]
        })
        .collect();
    let target = [0.0, trap.curvature_target(omega) * w * w, 0.0];
    let mut pinned: Vec<Option<f64>> = vec![None; n];
    for _ in 0..=n {
        let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
        if free.len() < 3 {
            return Err(infeasible("voltage limit leaves too few free electrodes".into()));
        }
        let mut rhs = Vector3::from(target);
        for (i, p) in pinned.iter().enumerate() {
            if let Some(v) = p {
                rhs -= Vector3::from(rows[i]) * *v;
            }
        }
        let a = DMatrix::from_fn(3, free.len(), |r, c| rows[free[c]][r]);
        let gram = &a * a.transpose();
        let y = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| infeasible("singular constraint system".into()))?;
        let free_volts = a.transpose() * y;
        let mut volts = vec![0.0; n];
        for (i, p) in pinned.iter().enumerate() {
            if let Some(v) = p {
                volts[i] = *v;
            }
        }
        for (k, &i) in free.iter().enumerate() {
            volts[i] = free_volts[k];
        }
        let over: Vec<usize> = free.iter().copied().filter(|&i| volts[i].abs() > VOLTAGE_LIMIT).collect();
        if over.is_empty() {
            let mut resid: f64 = 0.0;
            for r in 0..3 {
                let got: f64 = (0..n).map(|i| rows[i][r] * volts[i]).sum();
                resid = resid.max((got - target[r]).abs() / target[1]);
            }
            if resid > 1e-6 {
                return Err(infeasible(format!("constraint residual {resid:.2e} after clamping")));
            }
            return Ok(volts);
        }
        for i in over {
            pinned[i] = Some(VOLTAGE_LIMIT.copysign(volts[i]));
        }
    }
    Err(infeasible("active-set iteration did not settle".into()))
}

/// Largest relative deviation of ω from `omega_target` at the given
/// positions for wells solved on the ideal basis and realised on the plant.
pub fn peak_frequency_deviation(trap: &TrapModel, positions: &[f64], omega_target: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &x in positions {
        let v = solve_keyframe(trap, x, omega_target)?;
        let w = trap.find_well(&v, x, true)?;
        worst = worst.max((w.omega / omega_target - 1.0).abs());
    }
    Ok(worst)
}

/// Scales a gain ripple shape so that the plant, with its other
/// imperfections in place, shows the requested peak relative ω deviation
/// across `positions`.
pub fn tune_gain_ripple(
    trap: &TrapModel,
    shape: GainRipple,
    positions: &[f64],
    omega_target: f64,
    peak_deviation: f64,
) -> Result<GainRipple> {
    let deviation = |amp: f64| -> Result<f64> {
        let ripple = GainRipple { amplitude: amp, ..shape };
        let imp = Imperfections { gains: trap.gain_ripple(&ripple), ..trap.imperfections.clone() };
        let t = trap.with_imperfections(imp)?;
        Ok(peak_frequency_deviation(&t, positions, omega_target)? - peak_deviation)
    };
    let amp = brent(deviation, 0.0, 0.5, 1e-9, 100)?;
    Ok(GainRipple { amplitude: amp, ..shape })
}

/// Recipe for the plant's hidden errors, in the form a config file gives them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    /// Peak relative ω_COM deviation the gain ripple is scaled to produce.
    pub peak_omega_deviation: f64,
    pub ripple_period: f64,
    pub ripple_phase: f64,
    pub stray_amplitude: f64,
    pub stray_wavelength: f64,
    pub stray_phase: f64,
    pub filter_tau: f64,
}

impl Default for ErrorProfile {
    fn default() -> Self {
        ErrorProfile {
            peak_omega_deviation: 0.046,
            ripple_period: 960.0 * MICRON,
            ripple_phase: std::f64::consts::FRAC_PI_2,
            stray_amplitude: 2e-4,
            stray_wavelength: 80.0 * MICRON,
            stray_phase: 0.0,
            filter_tau: 2e-6,
        }
    }
}

impl ErrorProfile {
    pub fn none() -> Self {
        ErrorProfile { peak_omega_deviation: 0.0, stray_amplitude: 0.0, filter_tau: 0.0, ..Default::default() }
    }

    /// Builds the perturbed plant; the gain ripple is tuned over `positions`.
    pub fn realize(&self, trap: &TrapModel, positions: &[f64], omega_target: f64) -> Result<TrapModel> {
        let imp = Imperfections {
            gains: vec![1.0; trap.n_electrodes()],
            stray_amplitude: self.stray_amplitude,
            stray_wavelength: self.stray_wavelength,
            stray_phase: self.stray_phase,
            filter_tau: self.filter_tau,
        };
        let base = trap.with_imperfections(imp)?;
        if self.peak_omega_deviation == 0.0 {
            return Ok(base);
        }
        let shape = GainRipple { amplitude: 0.0, period: self.ripple_period, phase: self.ripple_phase };
        let ripple = tune_gain_ripple(&base, shape, positions, omega_target, self.peak_omega_deviation)?;
        let gains = base.gain_ripple(&ripple);
        base.with_imperfections(Imperfections { gains, ..base.imperfections.clone() })
    }
}

/// Nominal transport: wells every `spacing` from `x_start` to `x_end` at a
/// fixed COM frequency, played back over `duration` in `n_segments` segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub x_start: f64,
    pub x_end: f64,
    pub spacing: f64,
    pub omega_com: f64,
    pub duration: f64,
    pub n_segments: usize,
}

impl Default for TransportPlan {
    fn default() -> Self {
        TransportPlan {
            x_start: -40.0 * MICRON,
            x_end: 40.0 * MICRON,
            spacing: 2.0 * MICRON,
            omega_com: crate::phys::mhz(1.41),
            duration: 160e-6,
            n_segments: 8,
        }
    }
}

impl TransportPlan {
    pub fn keyframe_positions(&self) -> Result<Vec<f64>> {
        let span = self.x_end - self.x_start;
        let steps = (span.abs() / self.spacing).round();
        if !(self.spacing > 0.0) || steps < 1.0 || (steps * self.spacing - span.abs()).abs() > 1e-6 * self.spacing {
            return Err(Error::invalid("transport span must be a positive multiple of the keyframe spacing"));
        }
        let n = steps as usize;
        Ok((0..=n).map(|k| self.x_start + span * k as f64 / n as f64).collect())
    }

    /// Mean transport speed.
    pub fn velocity(&self) -> f64 {
        (self.x_end - self.x_start) / self.duration
    }
}

/// Solves every keyframe on the ideal basis and synthesises the waveform.
pub fn build_transport(trap: &TrapModel, plan: &TransportPlan) -> Result<Waveform> {
    let keyframes = plan
        .keyframe_positions()?
        .into_iter()
        .map(|x| Ok(Keyframe { x, volts: solve_keyframe(trap, x, plan.omega_com)? }))
        .collect::<Result<Vec<_>>>()?;
    synthesize_waveform(keyframes, plan.duration, plan.n_segments)
}

/// Waveform that holds one well at `x` for `duration`.
pub fn build_static(trap: &TrapModel, x: f64, omega_com: f64, duration: f64) -> Result<Waveform> {
    let volts = solve_keyframe(trap, x, omega_com)?;
    synthesize_waveform(vec![Keyframe { x, volts }; 2], duration, 1)
}
