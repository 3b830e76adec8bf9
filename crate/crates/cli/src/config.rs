//! Experiment configuration. Every physical key carries its unit as a suffix;
//! frequencies are given as ν = ω/2π.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tgate::beam::BeamModel;
use tgate::calib::{
    BalanceSettings, ComSettings, DopplerSettings, FidelitySettings, PipelineSettings, Plant, ProbeSettings, PulseShape,
};
use tgate::dynamics::calibrate_noise;
use tgate::measure::Readout;
use tgate::phys::{khz, mhz, MICRON};
use tgate::trap::{ErrorProfile, TrapModel, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Stationary,
    TransportStatic,
    TransportDynamic,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Stationary => "stationary",
            Mode::TransportStatic => "transport-static",
            Mode::TransportDynamic => "transport-dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub trap: TrapSection,
    pub beam: BeamSection,
    pub gate: GateSection,
    pub noise: NoiseSection,
    pub calibration: CalibrationSection,
    pub scan: ScanSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub electrodes: usize,
    pub electrode_pitch_um: f64,
    pub electrode_width_um: f64,
    /// Peak potential per applied volt.
    pub coupling: f64,
    pub com_frequency_mhz: f64,
    pub x_start_um: f64,
    pub x_end_um: f64,
    pub keyframe_spacing_um: f64,
    pub transport_duration_us: f64,
    pub segments: usize,
    pub imperfections: ImperfectionSection,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection {
            electrodes: 15,
            electrode_pitch_um: 60.0,
            electrode_width_um: 36.0,
            coupling: 0.02,
            com_frequency_mhz: 1.41,
            x_start_um: -40.0,
            x_end_um: 40.0,
            keyframe_spacing_um: 2.0,
            transport_duration_us: 160.0,
            segments: 8,
            imperfections: ImperfectionSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImperfectionSection {
    pub enabled: bool,
    /// Peak relative COM-frequency error produced by the gain ripple.
    pub com_deviation_frac: f64,
    pub ripple_period_um: f64,
    pub ripple_phase_rad: f64,
    pub stray_amplitude_mv: f64,
    pub stray_wavelength_um: f64,
    pub stray_phase_rad: f64,
    pub filter_tau_us: f64,
}

impl Default for ImperfectionSection {
    fn default() -> Self {
        let e = ErrorProfile::default();
        ImperfectionSection {
            enabled: true,
            com_deviation_frac: e.peak_omega_deviation,
            ripple_period_um: e.ripple_period / MICRON,
            ripple_phase_rad: FRAC_PI_2,
            stray_amplitude_mv: e.stray_amplitude * 1e3,
            stray_wavelength_um: e.stray_wavelength / MICRON,
            stray_phase_rad: e.stray_phase,
            filter_tau_us: e.filter_tau * 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSection {
    pub wavelength_nm: f64,
    pub axis_angle_deg: f64,
    pub waist_um: f64,
    pub center_um: f64,
    pub peak_rabi_khz: f64,
    /// κ in Δ_S = κΩ² before matching.
    pub stark_coeff_s: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        BeamSection {
            wavelength_nm: 729.0,
            axis_angle_deg: 45.0,
            waist_um: 15.0,
            center_um: 0.0,
            peak_rabi_khz: 100.0,
            stark_coeff_s: 2.8e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub tau_us: f64,
    /// Phase-space loops K of the stationary gate; δm = K/τ.
    pub loops: u32,
    pub lamb_dicke: f64,
    pub fock_cutoff: usize,
    pub nbar: f64,
    pub tolerance: f64,
    /// Readout shots per fidelity measurement.
    pub shots: u64,
    /// Noise realisations in the fidelity ensemble.
    pub ensemble: usize,
    pub parity_phases: usize,
}

impl Default for GateSection {
    fn default() -> Self {
        GateSection {
            tau_us: 160.0,
            loops: 2,
            lamb_dicke: 0.042,
            fock_cutoff: 15,
            nbar: 0.0,
            tolerance: 1e-7,
            shots: 500,
            ensemble: 500,
            parity_phases: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub enabled: bool,
    pub ramsey_loss_frac: f64,
    pub ramsey_delay_us: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { enabled: true, ramsey_loss_frac: 0.014, ramsey_delay_us: 160.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub probe_shots: u64,
    pub probe_step_ns: f64,
    pub full_half_span_khz: f64,
    pub full_step_khz: f64,
    pub doppler_half_span_khz: f64,
    pub doppler_step_khz: f64,
    pub doppler_tolerance_khz: f64,
    pub doppler_max_rounds: usize,
    pub com_step_um: f64,
    pub com_noise_frac: f64,
    pub com_readings: usize,
    pub com_threshold_frac: f64,
    pub com_max_rounds: usize,
    pub reduced_power: f64,
    pub stark_difference_khz: f64,
    /// [start, stop, step]
    pub static_delta_m_khz: [f64; 3],
    pub dynamic_delta_m_khz: [f64; 3],
    pub delta_g_half_span_khz: f64,
    pub delta_g_step_khz: f64,
    pub max_velocity_change_frac: f64,
    pub envelope_stride: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            probe_shots: 500,
            probe_step_ns: 20.0,
            full_half_span_khz: 60.0,
            full_step_khz: 1.0,
            doppler_half_span_khz: 120.0,
            doppler_step_khz: 4.0,
            doppler_tolerance_khz: 2.0,
            doppler_max_rounds: 5,
            com_step_um: 5.0,
            com_noise_frac: 1e-3,
            com_readings: 16,
            com_threshold_frac: 2e-3,
            com_max_rounds: 5,
            reduced_power: 0.25,
            stark_difference_khz: 5.0,
            static_delta_m_khz: [11.0, 17.0, 0.5],
            dynamic_delta_m_khz: [-18.0, -12.0, 0.5],
            delta_g_half_span_khz: 3.0,
            delta_g_step_khz: 0.2,
            max_velocity_change_frac: 0.2,
            envelope_stride: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanParameter {
    DeltaM,
    DeltaG,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub parameter: ScanParameter,
    pub start_khz: f64,
    pub stop_khz: f64,
    pub step_khz: f64,
    /// Fixed δm while scanning δg; the calibrated value when absent.
    pub delta_m_khz: Option<f64>,
    /// Fixed δg while scanning δm; the calibrated value when absent.
    pub delta_g_khz: Option<f64>,
    /// Light shift deliberately left uncompensated.
    pub residual_stark_hz: f64,
    pub noisy: bool,
    /// Readout shots per point; 0 reports exact expectation values.
    pub shots: u64,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            parameter: ScanParameter::DeltaM,
            start_khz: -35.0,
            stop_khz: 35.0,
            step_khz: 0.5,
            delta_m_khz: None,
            delta_g_khz: None,
            residual_stark_hz: 0.0,
            noisy: false,
            shots: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub mode: Mode,
    /// Not part of the experiment, so left out of the canonical form and hash.
    #[serde(skip_serializing)]
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, mode: Mode::Stationary, out: "out".into() }
    }
}

fn grid(spec: [f64; 3], what: &str) -> Result<Vec<f64>, String> {
    let [start, stop, step] = spec;
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(format!("{what}: need start <= stop and step > 0"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = &self.trap;
        if t.segments == 0 || t.electrodes < 3 {
            return Err("trap: need at least one segment and three electrodes".into());
        }
        if !(t.x_end_um > t.x_start_um) || !(t.transport_duration_us > 0.0) || !(t.keyframe_spacing_um > 0.0) {
            return Err("trap: transport needs x_end_um > x_start_um and positive duration and spacing".into());
        }
        if !(self.gate.tau_us > 0.0) || self.gate.loops == 0 {
            return Err("gate: tau_us and loops must be positive".into());
        }
        if self.gate.ensemble == 0 || self.gate.shots == 0 || self.gate.parity_phases < 3 {
            return Err("gate: need ensemble >= 1, shots >= 1 and at least three parity phases".into());
        }
        if !(0.0..1.0).contains(&self.noise.ramsey_loss_frac) {
            return Err("noise: ramsey_loss_frac must lie in [0, 1)".into());
        }
        if self.calibration.probe_shots == 0 {
            return Err("calibration: probe_shots must be >= 1".into());
        }
        grid(self.calibration.static_delta_m_khz, "calibration.static_delta_m_khz")?;
        grid(self.calibration.dynamic_delta_m_khz, "calibration.dynamic_delta_m_khz")?;
        Ok(())
    }

    pub fn scan_grid(&self) -> Result<Vec<f64>, String> {
        let s = &self.scan;
        grid([s.start_khz, s.stop_khz, s.step_khz], "scan").map(|g| g.into_iter().map(khz).collect())
    }

    pub fn plan(&self) -> TransportPlan {
        let t = &self.trap;
        TransportPlan {
            x_start: t.x_start_um * MICRON,
            x_end: t.x_end_um * MICRON,
            spacing: t.keyframe_spacing_um * MICRON,
            omega_com: mhz(t.com_frequency_mhz),
            duration: t.transport_duration_us / 1e6,
            n_segments: t.segments,
        }
    }

    fn com_positions(&self) -> Vec<f64> {
        let t = &self.trap;
        let n = ((t.x_end_um - t.x_start_um) / self.calibration.com_step_um + 1e-9).floor() as usize;
        (0..=n).map(|k| (t.x_start_um + k as f64 * self.calibration.com_step_um) * MICRON).collect()
    }

    pub fn beam(&self) -> BeamModel {
        let b = &self.beam;
        BeamModel {
            wavelength: b.wavelength_nm / 1e9,
            axis_angle: b.axis_angle_deg.to_radians(),
            waist: b.waist_um * MICRON,
            center: b.center_um * MICRON,
            peak_rabi: khz(b.peak_rabi_khz),
            stark_coeff: b.stark_coeff_s,
        }
    }

    /// The simulated apparatus, with imperfections and laser noise.
    pub fn plant(&self) -> tgate::Result<Plant> {
        let t = &self.trap;
        let ideal = TrapModel::uniform(t.electrodes, t.electrode_pitch_um * MICRON, t.electrode_width_um * MICRON, t.coupling)?;
        let i = &t.imperfections;
        let trap = if i.enabled {
            ErrorProfile {
                peak_omega_deviation: i.com_deviation_frac,
                ripple_period: i.ripple_period_um * MICRON,
                ripple_phase: i.ripple_phase_rad,
                stray_amplitude: i.stray_amplitude_mv / 1e3,
                stray_wavelength: i.stray_wavelength_um * MICRON,
                stray_phase: i.stray_phase_rad,
                filter_tau: i.filter_tau_us / 1e6,
            }
            .realize(&ideal, &self.com_positions(), mhz(t.com_frequency_mhz))?
        } else {
            ideal
        };
        let sigma_carrier = if self.noise.enabled && self.noise.ramsey_loss_frac > 0.0 {
            calibrate_noise(self.noise.ramsey_loss_frac, self.noise.ramsey_delay_us / 1e6)?
        } else {
            0.0
        };
        Ok(Plant {
            trap,
            beam: self.beam(),
            eta_bm: self.gate.lamb_dicke,
            omega_com: mhz(t.com_frequency_mhz),
            fock_cutoff: self.gate.fock_cutoff,
            nbar: self.gate.nbar,
            sigma_carrier,
            tol: self.gate.tolerance,
            seed: self.run.seed,
        })
    }

    pub fn fidelity(&self) -> FidelitySettings {
        FidelitySettings {
            ensemble: self.gate.ensemble,
            noisy: self.noise.enabled,
            readout: Readout::Sampled { shots: self.gate.shots },
            phases: self.gate.parity_phases,
        }
    }

    pub fn pipeline(&self) -> PipelineSettings {
        let c = &self.calibration;
        let defaults = PipelineSettings::default();
        PipelineSettings {
            plan: self.plan(),
            tau: self.gate.tau_us / 1e6,
            loops: self.gate.loops,
            stationary_x: self.beam.center_um * MICRON,
            com: ComSettings {
                positions: self.com_positions(),
                relative_noise: c.com_noise_frac,
                readings: c.com_readings,
                threshold: c.com_threshold_frac,
                max_rounds: c.com_max_rounds,
            },
            probe: ProbeSettings {
                readout: Readout::Sampled { shots: c.probe_shots },
                step: c.probe_step_ns / 1e9,
                area: std::f64::consts::PI,
                shape: PulseShape::Blackman,
            },
            doppler: DopplerSettings {
                target: 0.0,
                half_span: khz(c.doppler_half_span_khz),
                step: khz(c.doppler_step_khz),
                tolerance: khz(c.doppler_tolerance_khz),
                max_rounds: c.doppler_max_rounds,
            },
            full_half_span: khz(c.full_half_span_khz),
            full_step: khz(c.full_step_khz),
            reduced_scale: c.reduced_power,
            stark_difference: khz(c.stark_difference_khz),
            static_delta_m: grid(c.static_delta_m_khz, "").expect("validated").into_iter().map(khz).collect(),
            dynamic_delta_m: grid(c.dynamic_delta_m_khz, "").expect("validated").into_iter().map(khz).collect(),
            delta_g_half_span: khz(c.delta_g_half_span_khz),
            delta_g_step: khz(c.delta_g_step_khz),
            stationary_balance: BalanceSettings { shots: c.probe_shots, ..defaults.stationary_balance },
            transport_balance: BalanceSettings { shots: c.probe_shots, ..defaults.transport_balance },
            max_velocity_change: c.max_velocity_change_frac,
            stride: c.envelope_stride,
            fidelity: self.fidelity(),
            ..defaults
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("[trap]\nelectrode_pitch = 60\n").is_err());
        assert!(ExperimentConfig::parse("[lasers]\n").is_err());
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.canonical()).unwrap(), cfg);
    }

    #[test]
    fn default_settings_match_library_defaults() {
        let cfg = ExperimentConfig::default();
        let p = cfg.pipeline();
        let d = PipelineSettings::default();
        assert_eq!(p.static_delta_m.len(), d.static_delta_m.len());
        assert_eq!(p.com.positions.len(), d.com.positions.len());
        assert_eq!(p.plan, d.plan);
        assert_eq!(cfg.beam(), BeamModel::default());
    }
}
