//! Waveform calibrations: confinement and Doppler flattening, light-shift
//! measurement and dynamic Stark compensation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectroscopy::{
    probe_grid, run_spectroscopy, stationary_trace, transport_trace, ProbeKind, ProbeSettings, SpectroscopyResult,
};
use super::Plant;
use crate::beam::{rabi_envelopes, stark_envelope};
use crate::phys::{khz, to_khz, MICRON};
use crate::trap::{apply_confinement_scaling, retime_segments, Trajectory, Waveform};
use crate::{Error, Result};

/// Part of a transport a probe pulse covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Full,
    Segment(usize),
}

impl Window {
    fn bounds(&self, wf: &Waveform) -> Result<(f64, f64)> {
        match *self {
            Window::Full => Ok((0.0, wf.duration())),
            Window::Segment(k) if k < wf.segments().len() => Ok(wf.segment_window(k)),
            Window::Segment(k) => Err(Error::invalid(format!("segment {k} does not exist"))),
        }
    }

    fn label(&self) -> String {
        match self {
            Window::Full => "full".into(),
            Window::Segment(k) => format!("segment-{k}"),
        }
    }
}

/// Flat-probe carrier spectroscopy during `window` of a transport.
///
/// With `gate_beam_scale` set the gate beam is on during the pulse and the
/// line carries its light shift. A multi-peaked segment spectrum is an error;
/// on the full window it is reported through the `multimodal` flag.
#[allow(clippy::too_many_arguments)]
pub fn carrier_spectroscopy(
    plant: &Plant,
    wf: &Waveform,
    traj: &Trajectory,
    window: Window,
    gate_beam_scale: Option<f64>,
    detunings: &[f64],
    probe: &ProbeSettings,
    seed: u64,
) -> Result<SpectroscopyResult> {
    let (t0, t1) = window.bounds(wf)?;
    let trace = transport_trace(plant, traj, t0, t1, ProbeKind::Carrier { gate_beam_scale }, probe)?;
    let label = window.label();
    let r = run_spectroscopy(&label, &trace, detunings, probe, seed)?;
    if r.multimodal && matches!(window, Window::Segment(_)) {
        return Err(Error::Multimodal(format!(
            "{label}: fit residual {:.4} exceeds three times the noise floor {:.4}",
            r.fit.rms_residual, r.noise_floor
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComSettings {
    /// Measurement positions (m), increasing.
    pub positions: Vec<f64>,
    /// Relative standard deviation of one frequency reading.
    pub relative_noise: f64,
    /// Readings averaged per position.
    pub readings: usize,
    /// Convergence threshold on the largest relative deviation.
    pub threshold: f64,
    pub max_rounds: usize,
}

impl Default for ComSettings {
    fn default() -> Self {
        ComSettings {
            positions: (0..=16).map(|k| (-40.0 + 5.0 * k as f64) * MICRON).collect(),
            relative_noise: 1e-3,
            readings: 16,
            threshold: 2e-3,
            max_rounds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComReading {
    pub x: f64,
    /// Averaged COM frequency (rad/s), absent when no well was found.
    pub omega: Option<f64>,
    pub error: Option<String>,
}

/// Reads the COM frequency of static wells held at points along `wf`.
pub fn measure_com_profile(plant: &Plant, wf: &Waveform, settings: &ComSettings, seed: u64) -> Vec<ComReading> {
    settings
        .positions
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let volts = wf.path_voltages(wf.path_index(x));
            match plant.trap.find_well(&volts, x, true) {
                Ok(well) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let n = settings.readings.max(1);
                    let sum: f64 = (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            well.omega * (1.0 + settings.relative_noise * z)
                        })
                        .sum();
                    ComReading { x, omega: Some(sum / n as f64), error: None }
                }
                Err(e) => ComReading { x, omega: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

/// Voltage scale factors (ω_target/ω_measured)² for a complete profile.
pub fn confinement_factors(profile: &[ComReading], omega_target: f64) -> Result<Vec<f64>> {
    profile
        .iter()
        .map(|r| match (r.omega, &r.error) {
            (Some(w), None) if w > 0.0 => Ok((omega_target / w).powi(2)),
            _ => Err(Error::CalibrationFailure(format!(
                "no COM reading at x = {:.1} um: {}",
                r.x / MICRON,
                r.error.as_deref().unwrap_or("non-positive frequency")
            ))),
        })
        .collect()
}

fn max_deviation(profile: &[ComReading], omega_target: f64) -> Result<f64> {
    Ok(confinement_factors(profile, omega_target)?
        .iter()
        .map(|f| (f.sqrt().recip() - 1.0).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfinementRound {
    pub profile: Vec<ComReading>,
    pub max_deviation: f64,
    /// Factors applied after this reading; empty on the final round.
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfinementReport {
    pub omega_target: f64,
    pub rounds: Vec<ConfinementRound>,
    /// Largest deviation of the noise-free plant after correction.
    pub true_max_deviation: f64,
}

/// Scales the waveform voltages until the measured COM frequency is flat.
pub fn flatten_confinement(
    plant: &Plant,
    wf: &Waveform,
    omega_target: f64,
    settings: &ComSettings,
    seed: u64,
) -> Result<(Waveform, ConfinementReport)> {
    let mut wf = wf.clone();
    let mut rounds = Vec::new();
    for round in 0..=settings.max_rounds {
        let profile = measure_com_profile(plant, &wf, settings, crate::numeric::derive_seed(seed, "com", round as u64));
        let dev = max_deviation(&profile, omega_target)?;
        if dev < settings.threshold {
            rounds.push(ConfinementRound { profile, max_deviation: dev, factors: Vec::new() });
            let exact = ComSettings { relative_noise: 0.0, readings: 1, ..settings.clone() };
            let true_dev = max_deviation(&measure_com_profile(plant, &wf, &exact, 0), omega_target)?;
            return Ok((wf, ConfinementReport { omega_target, rounds, true_max_deviation: true_dev }));
        }
        if round == settings.max_rounds {
            rounds.push(ConfinementRound { profile, max_deviation: dev, factors: Vec::new() });
            break;
        }
        let factors = confinement_factors(&profile, omega_target)?;
        wf = apply_confinement_scaling(&wf, &settings.positions, &factors)?;
        rounds.push(ConfinementRound { profile, max_deviation: dev, factors });
    }
    Err(Error::CalibrationFailure(format!(
        "confinement still deviates by {:.3}% after {} rounds",
        100.0 * rounds.last().map_or(f64::NAN, |r| r.max_deviation),
        settings.max_rounds
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerSettings {
    /// Doppler shift of the nominal constant velocity (rad/s).
    pub target: f64,
    /// Half width of the per-segment probe scan (rad/s).
    pub half_span: f64,
    pub step: f64,
    /// Largest allowed peak-to-peak spread of the segment Doppler shifts.
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl DopplerSettings {
    pub fn new(target: f64) -> Self {
        DopplerSettings { target, half_span: khz(120.0), step: khz(4.0), tolerance: khz(2.0), max_rounds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerRound {
    /// Fitted line centre per segment (rad/s).
    pub segment_doppler: Vec<f64>,
    pub segment_sigma: Vec<f64>,
    pub spread: f64,
    /// Stretch factors applied after this round; empty on the final round.
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerReport {
    pub target: f64,
    pub rounds: Vec<DopplerRound>,
}

fn segment_spectra(
    plant: &Plant,
    wf: &Waveform,
    traj: &Trajectory,
    gate_beam_scale: Option<f64>,
    grid: &[f64],
    probe: &ProbeSettings,
    seed: u64,
) -> Result<Vec<SpectroscopyResult>> {
    (0..wf.segments().len())
        .into_par_iter()
        .map(|k| carrier_spectroscopy(plant, wf, traj, Window::Segment(k), gate_beam_scale, grid, probe, seed))
        .collect()
}

/// Retimes segments until every segment shows the target Doppler shift.
pub fn flatten_doppler(
    plant: &Plant,
    wf: &Waveform,
    settings: &DopplerSettings,
    probe: &ProbeSettings,
    seed: u64,
) -> Result<(Waveform, DopplerReport)> {
    let grid = probe_grid(settings.target, settings.half_span, settings.step);
    let mut wf = wf.clone();
    let mut rounds = Vec::new();
    for round in 0..=settings.max_rounds {
        let traj = plant.trajectory(&wf)?;
        let spectra = segment_spectra(plant, &wf, &traj, None, &grid, probe, crate::numeric::derive_seed(seed, "doppler", round as u64))?;
        let d: Vec<f64> = spectra.iter().map(|s| s.center()).collect();
        let spread = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - d.iter().cloned().fold(f64::INFINITY, f64::min);
        let sigma = spectra.iter().map(|s| s.center_sigma()).collect();
        if spread <= settings.tolerance {
            rounds.push(DopplerRound { segment_doppler: d, segment_sigma: sigma, spread, factors: Vec::new() });
            return Ok((wf, DopplerReport { target: settings.target, rounds }));
        }
        if round == settings.max_rounds {
            rounds.push(DopplerRound { segment_doppler: d, segment_sigma: sigma, spread, factors: Vec::new() });
            break;
        }
        let factors: Vec<f64> = d.iter().map(|x| x / settings.target).collect();
        wf = retime_segments(&wf, &factors)?;
        rounds.push(DopplerRound { segment_doppler: d, segment_sigma: sigma, spread, factors });
    }
    let last = rounds.last().expect("at least one round ran");
    Err(Error::CalibrationFailure(format!(
        "segment Doppler spread {:.2} kHz after {} rounds; residual profile (kHz): {:?}",
        to_khz(last.spread),
        settings.max_rounds,
        last.segment_doppler.iter().map(|d| (to_khz(*d) * 100.0).round() / 100.0).collect::<Vec<_>>()
    )))
}

/// Per-segment carrier lines with the gate beam off and on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightShiftProfile {
    pub scale: f64,
    /// Line centre without the gate beam (rad/s).
    pub doppler: Vec<f64>,
    /// Light shift of the gate beam per segment (rad/s).
    pub shifts: Vec<f64>,
    /// 1σ fit uncertainty of each shift (rad/s).
    pub sigmas: Vec<f64>,
}

impl LightShiftProfile {
    /// Centre-segment shift minus the mean of the two edge segments.
    pub fn center_edge_difference(&self) -> f64 {
        let n = self.shifts.len();
        let max = self.shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max - 0.5 * (self.shifts[0] + self.shifts[n - 1])
    }

    /// 1σ uncertainty of [`Self::center_edge_difference`].
    pub fn center_edge_sigma(&self) -> f64 {
        let n = self.sigmas.len();
        let k = (0..n).max_by(|&a, &b| self.shifts[a].total_cmp(&self.shifts[b])).unwrap_or(0);
        let s = |i: usize| self.sigmas.get(i).copied().unwrap_or(0.0);
        (s(k).powi(2) + 0.25 * (s(0).powi(2) + s(n.saturating_sub(1)).powi(2))).sqrt()
    }
}

/// Measures the gate beam's light shift in every segment at power `scale`.
///
/// Both scans use one seed, so without a light shift they coincide.
pub fn segment_light_shifts(
    plant: &Plant,
    wf: &Waveform,
    scale: f64,
    settings: &DopplerSettings,
    probe: &ProbeSettings,
    seed: u64,
) -> Result<LightShiftProfile> {
    let traj = plant.trajectory(wf)?;
    let grid = probe_grid(settings.target, settings.half_span, settings.step);
    let off = segment_spectra(plant, wf, &traj, None, &grid, probe, seed)?;
    let on = segment_spectra(plant, wf, &traj, Some(scale), &grid, probe, seed)?;
    let doppler: Vec<f64> = off.iter().map(|s| s.center()).collect();
    let shifts = on.iter().zip(&doppler).map(|(s, d)| s.center() - d).collect();
    let sigmas = on.iter().zip(&off).map(|(a, b)| a.center_sigma().hypot(b.center_sigma())).collect();
    Ok(LightShiftProfile { scale, doppler, shifts, sigmas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkMatchReport {
    pub target_difference: f64,
    pub kappa_initial: f64,
    pub kappa: f64,
    /// Measured centre-edge difference after each rescaling.
    pub differences: Vec<f64>,
    pub profile: LightShiftProfile,
}

/// Rescales the plant's light-shift coefficient until the centre-edge light
/// shift difference at power `scale` equals `target`.
pub fn match_stark_coefficient(
    plant: &Plant,
    wf: &Waveform,
    scale: f64,
    target: f64,
    settings: &DopplerSettings,
    probe: &ProbeSettings,
    seed: u64,
) -> Result<StarkMatchReport> {
    if !(target > 0.0) || !(plant.beam.stark_coeff > 0.0) {
        return Err(Error::invalid("matching needs a positive target and a non-zero starting coefficient"));
    }
    let mut p = plant.clone();
    let mut differences = Vec::new();
    // least-squares slope of diff = c·κ over all rounds
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for _ in 0..5 {
        let profile = segment_light_shifts(&p, wf, scale, settings, probe, seed)?;
        let diff = profile.center_edge_difference();
        differences.push(diff);
        let tol = (1e-2 * target).max(2.0 * profile.center_edge_sigma());
        if (diff - target).abs() <= tol {
            return Ok(StarkMatchReport {
                target_difference: target,
                kappa_initial: plant.beam.stark_coeff,
                kappa: p.beam.stark_coeff,
                differences,
                profile,
            });
        }
        let k = p.beam.stark_coeff;
        sxy += k * diff;
        sxx += k * k;
        if !(sxy > 0.0) {
            return Err(Error::CalibrationFailure("no light-shift difference between centre and edge".into()));
        }
        p.beam.stark_coeff = target * sxx / sxy;
    }
    Err(Error::CalibrationFailure(format!("light-shift difference did not settle: {differences:?}")))
}

/// Ions held in a static well or carried by a transport.
#[derive(Debug, Clone, Copy)]
pub enum SidebandSource<'a> {
    Stationary { x: f64, duration: f64 },
    Transport { wf: &'a Waveform, traj: &'a Trajectory, window: Window },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandReport {
    pub scale: f64,
    pub blue: SpectroscopyResult,
    pub red: SpectroscopyResult,
    pub omega_b: f64,
    pub omega_r: f64,
}

impl SidebandReport {
    /// Common shift of both sidebands: Doppler plus light shift.
    pub fn common_shift(&self) -> f64 {
        0.5 * (self.omega_b + self.omega_r)
    }

    /// Apparent mode frequency.
    pub fn mode_frequency(&self) -> f64 {
        0.5 * (self.omega_b - self.omega_r)
    }
}

/// Locates the blue and red breathing-mode sidebands at power `scale`.
///
/// The probe grids are centred on `±ω_BM + center_guess`.
pub fn calibrate_sidebands(
    plant: &Plant,
    source: SidebandSource<'_>,
    scale: f64,
    center_guess: f64,
    half_span: f64,
    step: f64,
    probe: &ProbeSettings,
    seed: u64,
) -> Result<SidebandReport> {
    let run = |sign: i8| -> Result<SpectroscopyResult> {
        let kind = ProbeKind::Sideband { sign, scale };
        let (trace, label) = match source {
            SidebandSource::Stationary { x, duration } => (stationary_trace(plant, x, duration, kind, probe)?, "static".to_string()),
            SidebandSource::Transport { wf, traj, window } => {
                let (t0, t1) = window.bounds(wf)?;
                (transport_trace(plant, traj, t0, t1, kind, probe)?, window.label())
            }
        };
        let grid = probe_grid(f64::from(sign) * plant.omega_bm() + center_guess, half_span, step);
        let label = format!("{}-{label}", if sign > 0 { "blue" } else { "red" });
        run_spectroscopy(&label, &trace, &grid, probe, seed).map_err(|e| match e {
            Error::CalibrationFailure(m) => Error::CalibrationFailure(format!("sideband fit failed: {m}")),
            other => other,
        })
    };
    let blue = run(1)?;
    let red = run(-1)?;
    Ok(SidebandReport { scale, omega_b: blue.center(), omega_r: red.center(), blue, red })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationReport {
    pub light_shifts: LightShiftProfile,
    /// Stretch factors applied per segment.
    pub factors: Vec<f64>,
    /// Relative velocity change per segment.
    pub velocity_change: Vec<f64>,
    pub residual: StarkResidual,
}

/// Slows each segment so its extra Doppler shift cancels its mean light shift.
///
/// Segment k moves at `v_k(1 − Δ_S,k/δ_D,k)`, which lowers its Doppler shift
/// by the measured light shift. Changes beyond `max_velocity_change` of the
/// nominal velocity are rejected.
pub fn dynamic_stark_compensation(
    plant: &Plant,
    wf: &Waveform,
    light: &LightShiftProfile,
    max_velocity_change: f64,
) -> Result<(Waveform, CompensationReport)> {
    let n = wf.segments().len();
    if light.shifts.len() != n || light.doppler.len() != n {
        return Err(Error::invalid("one light shift and Doppler shift per segment required"));
    }
    let velocity_change: Vec<f64> = light.shifts.iter().zip(&light.doppler).map(|(s, d)| -s / d).collect();
    if let Some((k, dv)) = velocity_change.iter().enumerate().find(|(_, dv)| dv.abs() > max_velocity_change) {
        return Err(Error::InfeasibleCompensation(format!(
            "segment {k} needs a {:.1}% velocity change, limit is {:.1}%",
            100.0 * dv.abs(),
            100.0 * max_velocity_change
        )));
    }
    let factors: Vec<f64> = velocity_change.iter().map(|dv| 1.0 / (1.0 + dv)).collect();
    let out = retime_segments(wf, &factors)?;
    let residual = stark_residual(plant, wf, &out, light)?;
    Ok((out, CompensationReport { light_shifts: light.clone(), factors, velocity_change, residual }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkResidual {
    /// Ω₁Ω₂-weighted mean of `s²Δ_S(t) − δ_extra(t)` (rad/s).
    pub weighted_mean: f64,
    /// Ω₁Ω₂-weighted mean of its magnitude (rad/s).
    pub weighted_abs: f64,
    /// Time average of its magnitude over the whole transport (rad/s).
    pub mean_abs: f64,
}

/// Light shift left uncancelled by the segment staircase of `compensated`.
///
/// The extra Doppler shift of segment k is `δ_D,k(1 − n_k/n'_k)` for the
/// realised sample counts, so rounding is included while plant velocity
/// ripple common to both waveforms is not.
pub fn stark_residual(plant: &Plant, reference: &Waveform, compensated: &Waveform, light: &LightShiftProfile) -> Result<StarkResidual> {
    let traj = plant.trajectory(compensated)?;
    let (o1, o2) = rabi_envelopes(&traj, &plant.beam, plant.ion_spacing(), light.scale);
    let stark = stark_envelope(&o1, &o2, &plant.beam);
    let extra: Vec<f64> = reference
        .segments()
        .iter()
        .zip(compensated.segments())
        .zip(&light.doppler)
        .map(|((a, b), d)| d * (1.0 - a.samples as f64 / b.samples as f64))
        .collect();
    let mut bounds = Vec::with_capacity(extra.len());
    let mut acc = 0;
    for s in compensated.segments() {
        acc += s.samples;
        bounds.push(acc);
    }
    let (mut w_sum, mut r_sum, mut a_sum, mut t_sum) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..traj.len() {
        let k = bounds.partition_point(|&b| b <= j).min(extra.len() - 1);
        let w = o1[j] * o2[j];
        let r = stark[j] - extra[k];
        w_sum += w;
        r_sum += w * r;
        a_sum += w * r.abs();
        t_sum += r.abs();
    }
    if !(w_sum > 0.0) {
        return Err(Error::invalid("ions never reach the beam"));
    }
    Ok(StarkResidual { weighted_mean: r_sum / w_sum, weighted_abs: a_sum / w_sum, mean_abs: t_sum / traj.len() as f64 })
}
