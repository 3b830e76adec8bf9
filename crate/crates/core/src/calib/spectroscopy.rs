//! Simulated carrier and sideband spectroscopy on moving or static ions.
//!
//! Each ion is treated as an independent two-level system driven by a single
//! probe tone, propagated with exact 2×2 steps on a piecewise-constant grid.
//! The recorded signal is the bright fraction over both ions.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_gaussian_dip, GaussianDip};
use super::Plant;
use crate::beam::{rabi_envelopes, stark_envelope};
use crate::measure::Readout;
use crate::numeric::derive_seed;
use crate::phys::{khz, to_khz};
use crate::trap::{Trajectory, SAMPLE_PERIOD};
use crate::{Error, Result};

/// Experiments per point assumed for the noise floor when readout is exact.
pub const NOMINAL_EXPERIMENTS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub readout: Readout,
    /// Propagation step (s).
    pub step: f64,
    /// Pulse area of the carrier probe over its window (rad).
    pub area: f64,
    pub shape: PulseShape,
}

/// Amplitude envelope of the carrier probe across its window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseShape {
    Flat,
    /// Blackman window; no spectral side lobes.
    Blackman,
}

impl PulseShape {
    /// Envelope at fractional time `u` ∈ [0, 1], normalised to unit mean.
    pub fn envelope(&self, u: f64) -> f64 {
        match self {
            PulseShape::Flat => 1.0,
            PulseShape::Blackman => {
                let a = 2.0 * PI * u;
                (0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()) / 0.42
            }
        }
    }

    fn samples(&self, rabi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| rabi * self.envelope((k as f64 + 0.5) / n as f64)).collect()
    }
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings { readout: Readout::Sampled { shots: NOMINAL_EXPERIMENTS }, step: 20e-9, area: PI, shape: PulseShape::Blackman }
    }
}

impl ProbeSettings {
    fn experiments(&self) -> u64 {
        match self.readout {
            Readout::Exact => NOMINAL_EXPERIMENTS,
            Readout::Sampled { shots } => shots,
        }
    }

    /// RMS projection noise of a bright-fraction spectrum whose expected
    /// values are `model`.
    pub fn noise_floor(&self, model: &[f64]) -> f64 {
        let var = model.iter().map(|f| f.clamp(0.0, 1.0) * (1.0 - f.clamp(0.0, 1.0))).sum::<f64>() / model.len().max(1) as f64;
        (var / (2.0 * self.experiments() as f64)).sqrt()
    }
}

/// Piecewise-constant drive seen by the two ions during a probe pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub dt: f64,
    pub rabi: [Vec<f64>; 2],
    /// Probe offset from the bare carrier at which each step is resonant.
    pub resonance: Vec<f64>,
}

impl ProbeTrace {
    fn len(&self) -> usize {
        self.resonance.len()
    }

    /// D-state probability of each ion after the pulse at probe offset `delta`.
    pub fn excitation(&self, delta: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (ion, rabi) in self.rabi.iter().enumerate() {
            // amplitudes (S, D) as (re, im) pairs
            let (mut sr, mut si, mut dr, mut di) = (1.0, 0.0, 0.0, 0.0);
            for k in 0..self.len() {
                let om = rabi[k];
                let det = delta - self.resonance[k];
                let eff = om.hypot(det);
                if eff == 0.0 {
                    continue;
                }
                let th = 0.5 * eff * self.dt;
                let (s, c) = th.sin_cos();
                let a = det / eff * s;
                let b = om / eff * s;
                // U = [[c + i a, −i b], [−i b, c − i a]]
                let nsr = c * sr - a * si + b * di;
                let nsi = c * si + a * sr - b * dr;
                let ndr = c * dr + a * di + b * si;
                let ndi = c * di - a * dr - b * sr;
                sr = nsr;
                si = nsi;
                dr = ndr;
                di = ndi;
            }
            out[ion] = dr * dr + di * di;
        }
        out
    }
}

fn sample_uniform(values: &[f64], dt: f64, t: f64) -> f64 {
    let s = (t / dt).clamp(0.0, (values.len() - 1) as f64);
    let i = (s.floor() as usize).min(values.len().saturating_sub(2));
    let w = s - i as f64;
    values[i] + w * (values[i + 1] - values[i])
}

fn steps_for(t0: f64, t1: f64, step: f64) -> Result<(usize, f64)> {
    if !(t1 > t0) || !(step > 0.0) {
        return Err(Error::invalid("probe window must have positive length"));
    }
    let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
    Ok((n, (t1 - t0) / n as f64))
}

/// What drives the transition during a probe pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProbeKind {
    /// Carrier probe; optionally with the gate beam on at `scale`, far
    /// from any motional resonance, so the line carries its light shift.
    Carrier { gate_beam_scale: Option<f64> },
    /// One gate tone on the blue (`+1`) or red (`−1`) breathing-mode sideband
    /// at power `scale`.
    Sideband { sign: i8, scale: f64 },
}

/// Drive trace for a probe pulse during `[t0, t1]` of a transport.
pub fn transport_trace(plant: &Plant, traj: &Trajectory, t0: f64, t1: f64, kind: ProbeKind, probe: &ProbeSettings) -> Result<ProbeTrace> {
    if t1 > traj.duration() + 1e-12 || t0 < 0.0 {
        return Err(Error::invalid(format!("probe window [{t0:e}, {t1:e}] s outside trajectory")));
    }
    let (n, dt) = steps_for(t0, t1, probe.step)?;
    let d = plant.ion_spacing();
    let (o1, o2) = rabi_envelopes(traj, &plant.beam, d, 1.0);
    let stark = stark_envelope(&o1, &o2, &plant.beam);
    let bm = traj.omega_bm();
    let mids: Vec<f64> = (0..n).map(|k| t0 + (k as f64 + 0.5) * dt).collect();
    let at = |v: &[f64], t: f64| sample_uniform(v, SAMPLE_PERIOD, t);
    let doppler = |t: f64| plant.beam.doppler_shift(at(&traj.v, t));
    match kind {
        ProbeKind::Carrier { gate_beam_scale } => {
            let rabi = probe.shape.samples(probe.area / (t1 - t0), n);
            let s2 = gate_beam_scale.map_or(0.0, |s| s * s);
            Ok(ProbeTrace {
                dt,
                resonance: mids
                    .iter()
                    .zip(&rabi)
                    .map(|(&t, &om)| doppler(t) + plant.beam.stark(om, om) + s2 * at(&stark, t))
                    .collect(),
                rabi: [rabi.clone(), rabi],
            })
        }
        ProbeKind::Sideband { sign, scale } => {
            let g = plant.eta_bm * scale;
            Ok(ProbeTrace {
                dt,
                rabi: [mids.iter().map(|&t| g * at(&o1, t)).collect(), mids.iter().map(|&t| g * at(&o2, t)).collect()],
                resonance: mids
                    .iter()
                    .map(|&t| f64::from(sign) * at(&bm, t) + doppler(t) + scale * scale * at(&stark, t))
                    .collect(),
            })
        }
    }
}

/// Drive trace for ions held at `x` for a pulse of length `duration`.
pub fn stationary_trace(plant: &Plant, x: f64, duration: f64, kind: ProbeKind, probe: &ProbeSettings) -> Result<ProbeTrace> {
    let (n, dt) = steps_for(0.0, duration, probe.step)?;
    let d = plant.ion_spacing();
    let o1 = plant.beam.rabi_at(x - 0.5 * d);
    let o2 = plant.beam.rabi_at(x + 0.5 * d);
    let stark = plant.beam.stark(o1, o2);
    match kind {
        ProbeKind::Carrier { gate_beam_scale } => {
            let rabi = probe.shape.samples(probe.area / duration, n);
            let s2 = gate_beam_scale.map_or(0.0, |s| s * s);
            Ok(ProbeTrace {
                dt,
                resonance: rabi.iter().map(|&om| plant.beam.stark(om, om) + s2 * stark).collect(),
                rabi: [rabi.clone(), rabi],
            })
        }
        ProbeKind::Sideband { sign, scale } => {
            let g = plant.eta_bm * scale;
            Ok(ProbeTrace {
                dt,
                rabi: [vec![g * o1; n], vec![g * o2; n]],
                resonance: vec![f64::from(sign) * plant.omega_bm() + scale * scale * stark; n],
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyResult {
    pub label: String,
    /// Probe offsets from the bare carrier (rad/s).
    pub detunings: Vec<f64>,
    /// Mean bright fraction per point.
    pub signal: Vec<f64>,
    /// Bright counts out of `2·experiments` per point; empty for exact readout.
    pub bright_counts: Vec<u64>,
    pub experiments: u64,
    pub fit: GaussianDip,
    /// Fit residual exceeds three times the projection-noise floor of the fit.
    pub multimodal: bool,
    pub noise_floor: f64,
}

impl SpectroscopyResult {
    /// Fitted line centre (rad/s).
    pub fn center(&self) -> f64 {
        khz(self.fit.center)
    }

    pub fn center_sigma(&self) -> f64 {
        khz(self.fit.center_sigma)
    }

    /// Fitted 1σ Gaussian width (rad/s).
    pub fn width(&self) -> f64 {
        khz(self.fit.width)
    }
}

/// Evenly spaced probe offsets `center ± half_span`.
pub fn probe_grid(center: f64, half_span: f64, step: f64) -> Vec<f64> {
    let n = (half_span / step).round() as i64;
    (-n..=n).map(|k| center + k as f64 * step).collect()
}

/// Scans the probe over `detunings` and fits one Gaussian dip.
pub fn run_spectroscopy(label: &str, trace: &ProbeTrace, detunings: &[f64], probe: &ProbeSettings, seed: u64) -> Result<SpectroscopyResult> {
    if detunings.len() < 5 {
        return Err(Error::invalid("spectroscopy needs at least five probe detunings"));
    }
    let exc: Vec<[f64; 2]> = detunings.par_iter().map(|&d| trace.excitation(d)).collect();
    let (signal, counts, experiments) = match probe.readout {
        Readout::Exact => (exc.iter().map(|p| 1.0 - 0.5 * (p[0] + p[1])).collect::<Vec<f64>>(), Vec::new(), NOMINAL_EXPERIMENTS),
        Readout::Sampled { shots } => {
            if shots == 0 {
                return Err(Error::invalid("spectroscopy needs at least one experiment per point"));
            }
            let mut counts = Vec::with_capacity(exc.len());
            for (k, p) in exc.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label, k as u64));
                let mut bright = 0;
                for q in p {
                    let b = Binomial::new(shots, (1.0 - q).clamp(0.0, 1.0)).map_err(|e| Error::invalid(e.to_string()))?;
                    bright += b.sample(&mut rng);
                }
                counts.push(bright);
            }
            (counts.iter().map(|&c| c as f64 / (2 * shots) as f64).collect(), counts, shots)
        }
    };
    let x: Vec<f64> = detunings.iter().map(|&d| to_khz(d)).collect();
    let dur = trace.dt * trace.len() as f64;
    // Fourier-limited width of the pulse, as a starting point
    let width_guess = (0.4 / dur / 1e3).max(2.0 * (x[1] - x[0]).abs());
    let fit = fit_gaussian_dip(&x, &signal, width_guess).map_err(|e| match e {
        Error::CalibrationFailure(m) => Error::CalibrationFailure(format!("{label}: {m}")),
        other => other,
    })?;
    let floor = probe.noise_floor(&x.iter().map(|&v| fit.eval(v)).collect::<Vec<_>>());
    Ok(SpectroscopyResult {
        label: label.to_string(),
        detunings: detunings.to_vec(),
        signal,
        bright_counts: counts,
        experiments,
        multimodal: fit.rms_residual > 3.0 * floor,
        fit,
        noise_floor: floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::MICROSECOND;

    #[test]
    fn resonant_pi_pulse_inverts() {
        let tr = ProbeTrace { dt: 1e-8, rabi: [vec![PI / 20e-6; 2000], vec![PI / 20e-6; 2000]], resonance: vec![0.0; 2000] };
        let p = tr.excitation(0.0);
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detuned_pulse_matches_rabi_formula() {
        let om = PI / (20.0 * MICROSECOND);
        let tr = ProbeTrace { dt: 1e-8, rabi: [vec![om; 2000], vec![0.0; 2000]], resonance: vec![khz(3.0); 2000] };
        let det = khz(30.0);
        let eff = om.hypot(det - khz(3.0));
        let expect = (om / eff).powi(2) * (0.5 * eff * 20e-6).sin().powi(2);
        let p = tr.excitation(det);
        assert!((p[0] - expect).abs() < 1e-9);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn static_carrier_line_sits_within_probe_light_shift() {
        let plant = Plant::ideal();
        let probe = ProbeSettings { readout: Readout::Exact, ..Default::default() };
        let tr = stationary_trace(&plant, 0.0, 20e-6, ProbeKind::Carrier { gate_beam_scale: None }, &probe).unwrap();
        let grid = probe_grid(0.0, khz(100.0), khz(4.0));
        let r = run_spectroscopy("static", &tr, &grid, &probe, 1).unwrap();
        let peak = tr.rabi[0].iter().cloned().fold(0.0, f64::max);
        assert!(r.center() > 0.0 && r.center() < plant.beam.stark(peak, peak));
        assert!(!r.multimodal);
    }
}
