//! Calibration chains for the three gate experiments: ions held still in
//! the beam, and ions carried through it with static or dynamic light-shift
//! compensation.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::gate::{
    balance_power, estimate_fidelity, measure_point, scan_global_detuning, scan_mode_detuning, spin_phase_for, BalanceReport,
    BalanceSettings, DetuningFit, FidelityReport, FidelitySettings, ModeScan, RunSettings,
};
use super::spectroscopy::{probe_grid, ProbeSettings, SpectroscopyResult};
use super::transport::{
    calibrate_sidebands, carrier_spectroscopy, dynamic_stark_compensation, flatten_confinement, flatten_doppler,
    match_stark_coefficient, segment_light_shifts, ComSettings, CompensationReport, ConfinementReport, DopplerReport,
    DopplerSettings, LightShiftProfile, SidebandReport, SidebandSource, StarkMatchReport, Window,
};
use super::Plant;
use crate::beam::{stationary_envelopes, transport_envelopes};
use crate::dynamics::{EnvelopeSet, GateParams};
use crate::phys::khz;
use crate::trap::{build_transport, TransportPlan, Waveform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub plan: TransportPlan,
    /// Gate duration of the stationary experiment (s).
    pub tau: f64,
    /// Phase-space loops of the stationary gate.
    pub loops: u32,
    /// Where the stationary ions sit (m).
    pub stationary_x: f64,
    pub com: ComSettings,
    pub probe: ProbeSettings,
    /// Doppler flattening; the target is replaced by the nominal transport's.
    pub doppler: DopplerSettings,
    /// Full-transit carrier scan around the target Doppler shift.
    pub full_half_span: f64,
    pub full_step: f64,
    /// Power of the bare sideband scans.
    pub reduced_scale: f64,
    pub sideband_half_span: f64,
    pub sideband_step: f64,
    /// Centre-to-edge light-shift difference the beam's κ is matched to.
    pub stark_difference: f64,
    pub static_delta_m: Vec<f64>,
    pub dynamic_delta_m: Vec<f64>,
    pub delta_g_half_span: f64,
    pub delta_g_step: f64,
    pub stationary_balance: BalanceSettings,
    pub transport_balance: BalanceSettings,
    pub max_velocity_change: f64,
    /// Trajectory subsampling for gate envelopes.
    pub stride: usize,
    pub fidelity: FidelitySettings,
}

fn grid_khz(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| khz(lo + k as f64 * step)).collect()
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            plan: TransportPlan::default(),
            tau: 160e-6,
            loops: 2,
            stationary_x: 0.0,
            com: ComSettings::default(),
            probe: ProbeSettings::default(),
            doppler: DopplerSettings::new(0.0),
            full_half_span: khz(60.0),
            full_step: khz(1.0),
            reduced_scale: 0.25,
            sideband_half_span: khz(15.0),
            sideband_step: khz(0.25),
            stark_difference: khz(5.0),
            static_delta_m: grid_khz(11.0, 17.0, 0.5),
            dynamic_delta_m: grid_khz(-18.0, -12.0, 0.5),
            delta_g_half_span: khz(3.0),
            delta_g_step: khz(0.2),
            stationary_balance: BalanceSettings::new(0.3, 3.0),
            transport_balance: BalanceSettings { coarse_steps: 14, ..BalanceSettings::new(0.5, 4.0) },
            max_velocity_change: 0.2,
            stride: 20,
            fidelity: FidelitySettings::default(),
        }
    }
}

impl PipelineSettings {
    fn base_params(&self, plant: &Plant, tau: f64, delta_m: f64) -> GateParams {
        GateParams {
            tau,
            delta_m,
            delta_g: 0.0,
            omega_bm: plant.omega_bm(),
            eta_bm: plant.eta_bm,
            spin_phase: spin_phase_for(delta_m),
            rabi_scale: 1.0,
        }
    }

    /// Mode detuning that closes `loops` loops in `tau`.
    pub fn stationary_delta_m(&self) -> f64 {
        2.0 * PI * f64::from(self.loops) / self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRun {
    pub reduced: SidebandReport,
    pub full: SidebandReport,
    /// Light shift per unit power squared, from the two sideband scans (rad/s).
    pub shift_per_power: f64,
    pub balance: BalanceReport,
    pub params: GateParams,
    pub fidelity: FidelityReport,
}

/// Stationary gate: sideband scans at reduced and gate power fix the light
/// shift, the power is balanced at the loop-closing detuning, and the
/// fidelity is measured.
pub fn run_stationary(plant: &Plant, s: &PipelineSettings) -> Result<StationaryRun> {
    let d = plant.ion_spacing();
    let env = Arc::new(stationary_envelopes(&plant.beam, s.stationary_x, d, s.tau)?);
    let rabi = 0.5 * (env.omega_1()[0] + env.omega_2()[0]);
    let dm = s.stationary_delta_m();
    let mut params = s.base_params(plant, s.tau, dm);
    let guess = dm / (2.0 * f64::from(s.loops).sqrt()) / (plant.eta_bm * rabi);
    let scan = |scale: f64, center: f64, label: &str| {
        let duration = PI / (plant.eta_bm * scale * rabi);
        calibrate_sidebands(
            plant,
            SidebandSource::Stationary { x: s.stationary_x, duration },
            scale,
            center,
            s.sideband_half_span,
            s.sideband_step,
            &s.probe,
            plant.child_seed(label, 0),
        )
    };
    let reduced = scan(s.reduced_scale, 0.0, "sidebands-reduced")?;
    let full = scan(guess, reduced.common_shift(), "sidebands-full")?;
    let per_power = (full.common_shift() - reduced.common_shift()) / (guess * guess - s.reduced_scale * s.reduced_scale);
    let mut scale = guess;
    let mut balance = None;
    for _ in 0..3 {
        params.delta_g = per_power * scale * scale;
        let b = balance_power(plant, &env, &params, &s.stationary_balance)?;
        let done = (b.scale / scale - 1.0).abs() < 1e-4;
        scale = b.scale;
        balance = Some(b);
        if done {
            break;
        }
    }
    params.rabi_scale = scale;
    params.delta_g = per_power * scale * scale;
    let fidelity = estimate_fidelity(plant, &env, &params, &s.fidelity)?;
    Ok(StationaryRun {
        reduced,
        full,
        shift_per_power: per_power,
        balance: balance.expect("balance ran at least once"),
        params,
        fidelity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTransport {
    pub nominal: Waveform,
    pub flattened: Waveform,
    pub confinement: ConfinementReport,
    pub doppler: DopplerReport,
    /// Full-transit carrier spectra before and after the corrections.
    pub full_before: SpectroscopyResult,
    pub full_after: SpectroscopyResult,
    /// Doppler shift the gate tones are referenced to (rad/s).
    pub doppler_reference: f64,
}

/// Builds the nominal transport on the ideal trap model, then flattens its
/// confinement and velocity against the plant.
pub fn prepare_transport(plant: &Plant, s: &PipelineSettings) -> Result<PreparedTransport> {
    let nominal = build_transport(&plant.trap.ideal(), &s.plan)?;
    let target = plant.beam.doppler_shift(s.plan.velocity());
    let grid = probe_grid(target, s.full_half_span, s.full_step);
    let full = |wf: &Waveform, label: &str| -> Result<SpectroscopyResult> {
        let traj = plant.trajectory(wf)?;
        carrier_spectroscopy(plant, wf, &traj, Window::Full, None, &grid, &s.probe, plant.child_seed(label, 0))
    };
    let full_before = full(&nominal, "full-before")?;
    let (confined, confinement) =
        flatten_confinement(plant, &nominal, s.plan.omega_com, &s.com, plant.child_seed("confinement", 0))?;
    let ds = DopplerSettings { target, ..s.doppler };
    let (flattened, doppler) = flatten_doppler(plant, &confined, &ds, &s.probe, plant.child_seed("doppler", 0))?;
    let full_after = full(&flattened, "full-after")?;
    if full_after.multimodal {
        return Err(Error::CalibrationFailure(format!(
            "full-transit line still multi-peaked after flattening (residual {:.4})",
            full_after.fit.rms_residual
        )));
    }
    let doppler_reference = full_after.center();
    Ok(PreparedTransport { nominal, flattened, confinement, doppler, full_before, full_after, doppler_reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compensation {
    /// One global detuning for the whole transit.
    Static,
    /// Segment velocities retimed so the Doppler shift follows the light shift.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportRun {
    pub compensation: Compensation,
    /// Power from a first balance with the uncalibrated light shift.
    pub initial_balance: BalanceReport,
    pub stark: StarkMatchReport,
    /// Waveform the gate ran on.
    pub waveform: Waveform,
    pub dynamic: Option<CompensationReport>,
    pub mode_scan: ModeScan,
    pub detuning: Option<DetuningFit>,
    pub balance: BalanceReport,
    pub params: GateParams,
    pub fidelity: FidelityReport,
}

/// Gate envelopes for a transport, subsampled by `stride`.
pub fn gate_envelopes(plant: &Plant, wf: &Waveform, d_ref: f64, stride: usize) -> Result<Arc<EnvelopeSet>> {
    let traj = plant.trajectory(wf)?;
    Ok(Arc::new(transport_envelopes(&traj, &plant.beam, plant.ion_spacing(), d_ref, stride)?))
}

/// Intensity-weighted mean of the segment light shifts.
fn mean_light_shift(light: &LightShiftProfile) -> f64 {
    let w: f64 = light.shifts.iter().map(|x| x.max(0.0)).sum();
    if w > 0.0 {
        light.shifts.iter().map(|x| x.max(0.0) * x).sum::<f64>() / w
    } else {
        0.0
    }
}

/// Scans δg around `center`, moving the window while the minimum sits at
/// its edge.
fn global_detuning(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    params: &GateParams,
    center: f64,
    s: &PipelineSettings,
) -> Result<DetuningFit> {
    let mut center = center;
    let mut last = None;
    for _ in 0..4 {
        let grid = probe_grid(center, s.delta_g_half_span, s.delta_g_step);
        match scan_global_detuning(plant, env, params, &grid, &RunSettings::exact()) {
            Ok(fit) => return Ok(fit),
            Err(Error::RescanRequired(m)) => {
                let p1 = |dg: f64| -> Result<f64> {
                    let p = GateParams { delta_g: dg, ..*params };
                    Ok(measure_point(plant, env, &p, &RunSettings::exact(), dg, 0)?.populations.p1)
                };
                let low = p1(grid[0])? < p1(grid[grid.len() - 1])?;
                center += if low { -s.delta_g_half_span } else { s.delta_g_half_span };
                last = Some(m);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RescanRequired(last.unwrap_or_default()))
}

/// Transport gate with static or dynamic light-shift compensation.
pub fn run_transport(plant: &Plant, prep: &PreparedTransport, comp: Compensation, s: &PipelineSettings) -> Result<TransportRun> {
    let grid = match comp {
        Compensation::Static => &s.static_delta_m,
        Compensation::Dynamic => &s.dynamic_delta_m,
    };
    if grid.is_empty() || s.static_delta_m.is_empty() {
        return Err(Error::invalid("empty delta_m grid"));
    }
    let d_ref = prep.doppler_reference;
    let ds = DopplerSettings { target: prep.doppler.target, ..s.doppler };
    let tau_of = |env: &EnvelopeSet| env.duration();

    // power for the light-shift measurement, set at the static operating point
    let env = gate_envelopes(plant, &prep.flattened, d_ref, s.stride)?;
    let first = s.base_params(plant, tau_of(&env), s.static_delta_m[s.static_delta_m.len() / 2]);
    let initial_balance = balance_power(plant, &env, &first, &s.transport_balance)?;
    let base = s.base_params(plant, tau_of(&env), grid[grid.len() / 2]);
    let stark = match_stark_coefficient(
        plant,
        &prep.flattened,
        initial_balance.scale,
        s.stark_difference,
        &ds,
        &s.probe,
        plant.child_seed("stark-match", 0),
    )?;
    let mut plant = plant.clone();
    plant.beam.stark_coeff = stark.kappa;
    let plant = &plant;
    let env = gate_envelopes(plant, &prep.flattened, d_ref, s.stride)?;

    match comp {
        Compensation::Static => {
            let mut params = GateParams { rabi_scale: initial_balance.scale, ..base };
            let light = &stark.profile;
            params.delta_g = mean_light_shift(light) * (params.rabi_scale / light.scale).powi(2);
            let mode_scan = scan_mode_detuning(plant, &env, &params, grid, &RunSettings::exact(), Some(&s.transport_balance))?;
            let i = mode_scan.scan.points.iter().position(|p| p.value == mode_scan.best).expect("best is a scan point");
            params.delta_m = mode_scan.best;
            params.spin_phase = spin_phase_for(params.delta_m);
            params.rabi_scale = mode_scan.scales[i];
            let mut detuning = None;
            let mut balance = None;
            for _ in 0..2 {
                let fit = global_detuning(plant, &env, &params, params.delta_g, s)?;
                params.delta_g = fit.best;
                detuning = Some(fit);
                let b = balance_power(plant, &env, &params, &s.transport_balance)?;
                params.rabi_scale = b.scale;
                balance = Some(b);
            }
            let fidelity = estimate_fidelity(plant, &env, &params, &s.fidelity)?;
            Ok(TransportRun {
                compensation: comp,
                initial_balance,
                stark,
                waveform: prep.flattened.clone(),
                dynamic: None,
                mode_scan,
                detuning,
                balance: balance.expect("loop ran"),
                params,
                fidelity,
            })
        }
        Compensation::Dynamic => {
            let seed = plant.child_seed("light-shifts", 0);
            let compensate = |scale: f64| -> Result<(Waveform, CompensationReport, Arc<EnvelopeSet>)> {
                let light = segment_light_shifts(plant, &prep.flattened, scale, &ds, &s.probe, seed)?;
                let (wf, report) = dynamic_stark_compensation(plant, &prep.flattened, &light, s.max_velocity_change)?;
                let env = gate_envelopes(plant, &wf, d_ref, s.stride)?;
                Ok((wf, report, env))
            };
            let mut params = GateParams { rabi_scale: initial_balance.scale, ..base };
            let (mut wf, mut report, mut env) = compensate(params.rabi_scale)?;
            for _ in 0..2 {
                params.tau = tau_of(&env);
                let b = balance_power(plant, &env, &params, &s.transport_balance)?;
                params.rabi_scale = b.scale;
                (wf, report, env) = compensate(params.rabi_scale)?;
            }
            params.tau = tau_of(&env);
            let mode_scan = scan_mode_detuning(plant, &env, &params, grid, &RunSettings::exact(), Some(&s.transport_balance))?;
            let i = mode_scan.scan.points.iter().position(|p| p.value == mode_scan.best).expect("best is a scan point");
            params.delta_m = mode_scan.best;
            params.spin_phase = spin_phase_for(params.delta_m);
            params.rabi_scale = mode_scan.scales[i];
            let mut balance = None;
            for _ in 0..2 {
                (wf, report, env) = compensate(params.rabi_scale)?;
                params.tau = tau_of(&env);
                let b = balance_power(plant, &env, &params, &s.transport_balance)?;
                params.rabi_scale = b.scale;
                balance = Some(b);
            }
            let fidelity = estimate_fidelity(plant, &env, &params, &s.fidelity)?;
            Ok(TransportRun {
                compensation: comp,
                initial_balance,
                stark,
                waveform: wf,
                dynamic: Some(report),
                mode_scan,
                detuning: None,
                balance: balance.expect("loop ran"),
                params,
                fidelity,
            })
        }
    }
}
