use serde::{Deserialize, Serialize};

use super::{TrapModel, Waveform, SAMPLE_PERIOD};
use crate::phys::breathing_mode;
use crate::{Error, Result};

/// Well motion on the waveform time grid (`frames + 1` points from t = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Well position (m).
    pub x: Vec<f64>,
    /// Well velocity (m/s).
    pub v: Vec<f64>,
    /// COM mode frequency (rad/s).
    pub omega_com: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn omega_bm(&self) -> Vec<f64> {
        self.omega_com.iter().map(|&w| breathing_mode(w)).collect()
    }

    /// Grid indices with `t0 <= t <= t1`.
    pub fn window(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let eps = 1e-3 * SAMPLE_PERIOD;
        let a = self.times.partition_point(|&t| t < t0 - eps);
        let b = self.times.partition_point(|&t| t <= t1 + eps);
        a..b
    }
}

/// Follows the minimum of the plant potential through every frame.
///
/// The commanded frames pass through the first-order electrode filter
/// (started in steady state at the first keyframe) before the potential is
/// evaluated. Velocities are central differences of the positions.
pub fn extract_trajectory(trap: &TrapModel, wf: &Waveform) -> Result<Trajectory> {
    if wf.n_electrodes() != trap.n_electrodes() {
        return Err(Error::invalid("waveform and trap electrode counts differ"));
    }
    let n = wf.frames().len() + 1;
    let tau_f = trap.imperfections.filter_tau;
    let alpha = if tau_f > 0.0 { 1.0 - (-SAMPLE_PERIOD / tau_f).exp() } else { 1.0 };
    let mut eff = wf.initial_voltages();
    let mut times = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut omega = Vec::with_capacity(n);
    let mut guess = wf.keyframes()[0].x;
    for j in 0..n {
        if j > 0 {
            for (y, u) in eff.iter_mut().zip(&wf.frames()[j - 1]) {
                *y += (u - *y) * alpha;
            }
        }
        let well = trap
            .find_well(&eff, guess, true)
            .map_err(|e| Error::TrajectoryFailure { frame: j, reason: e.to_string() })?;
        guess = well.x;
        times.push(j as f64 * SAMPLE_PERIOD);
        x.push(well.x);
        omega.push(well.omega);
    }
    let v = (0..n)
        .map(|j| {
            if n < 2 {
                0.0
            } else if j == 0 {
                (x[1] - x[0]) / SAMPLE_PERIOD
            } else if j == n - 1 {
                (x[n - 1] - x[n - 2]) / SAMPLE_PERIOD
            } else {
                (x[j + 1] - x[j - 1]) / (2.0 * SAMPLE_PERIOD)
            }
        })
        .collect();
    Ok(Trajectory { times, x, v, omega_com: omega })
}

#[cfg(test)]
mod tests {
    use super::super::{solve_keyframe, synthesize_waveform, Keyframe};
    use super::*;
    use crate::phys::{mhz, MICRON};

    #[test]
    fn static_waveform_has_zero_velocity() {
        let t = TrapModel::ideal_default();
        let v = solve_keyframe(&t, 5.0 * MICRON, mhz(1.41)).unwrap();
        let kf = vec![Keyframe { x: 5.0 * MICRON, volts: v }; 2];
        let wf = synthesize_waveform(kf, 1e-6, 1).unwrap();
        let tr = extract_trajectory(&t, &wf).unwrap();
        assert_eq!(tr.len(), 201);
        assert!(tr.v.iter().all(|v| v.abs() < 1e-6));
        assert!(tr.omega_bm().iter().zip(&tr.omega_com).all(|(b, c)| (b / c - 3f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn lost_well_reports_frame() {
        let t = TrapModel::ideal_default();
        let v = solve_keyframe(&t, 0.0, mhz(1.41)).unwrap();
        let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
        let kf = vec![Keyframe { x: 0.0, volts: v }, Keyframe { x: 0.0, volts: flipped }];
        let wf = synthesize_waveform(kf, 1e-6, 1).unwrap();
        assert!(matches!(extract_trajectory(&t, &wf), Err(Error::TrajectoryFailure { .. })));
    }
}
