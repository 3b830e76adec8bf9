//! Closed-loop calibration routines run as simulated experiments on a plant.
//!
//! A [`Plant`] is the ground truth: the perturbed trap, the true beam and the
//! laser noise. Routines only see it through simulated measurements.

mod fit;
mod gate;
mod pipeline;
mod spectroscopy;
mod transport;

use serde::{Deserialize, Serialize};

use crate::dynamics::NoiseModel;
use crate::phys::{breathing_mode, ion_spacing, mhz};
use crate::qcore::HilbertSpec;
use crate::trap::{extract_trajectory, TrapModel, Trajectory, Waveform};
use crate::beam::BeamModel;
use crate::numeric::derive_seed;
use crate::Result;

pub use fit::{fit_gaussian_dip, GaussianDip};
pub use gate::{
    balance_power, estimate_fidelity, measure_point, scan_global_detuning, scan_mode_detuning, spin_phase_for,
    BalanceReport, BalanceSettings, DetuningFit, FidelityReport, FidelitySettings, ModeScan, RunSettings,
};
pub use pipeline::{
    gate_envelopes, prepare_transport, run_stationary, run_transport, Compensation, PipelineSettings, PreparedTransport, StationaryRun,
    TransportRun,
};
pub use spectroscopy::{
    probe_grid, run_spectroscopy, stationary_trace, transport_trace, ProbeKind, ProbeSettings, ProbeTrace, PulseShape,
    SpectroscopyResult, NOMINAL_EXPERIMENTS,
};
pub use transport::{
    calibrate_sidebands, carrier_spectroscopy, confinement_factors, dynamic_stark_compensation, flatten_confinement,
    flatten_doppler, match_stark_coefficient, measure_com_profile, segment_light_shifts, stark_residual, ComReading,
    ComSettings, CompensationReport, ConfinementReport, ConfinementRound, DopplerReport, DopplerRound, DopplerSettings,
    LightShiftProfile, SidebandReport, SidebandSource, StarkMatchReport, StarkResidual, Window,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    /// Trap with its hidden imperfections.
    pub trap: TrapModel,
    pub beam: BeamModel,
    pub eta_bm: f64,
    /// Nominal COM frequency; fixes the ion spacing and mode frequency.
    pub omega_com: f64,
    pub fock_cutoff: usize,
    pub nbar: f64,
    /// Per-shot quasi-static carrier error (rad/s).
    pub sigma_carrier: f64,
    /// Propagator tolerance.
    pub tol: f64,
    pub seed: u64,
}

impl Plant {
    /// Ideal trap, default beam, no laser noise.
    pub fn ideal() -> Self {
        Plant {
            trap: TrapModel::ideal_default(),
            beam: BeamModel::default(),
            eta_bm: 0.042,
            omega_com: mhz(1.41),
            fock_cutoff: 15,
            nbar: 0.0,
            sigma_carrier: 0.0,
            tol: 1e-7,
            seed: 0,
        }
    }

    pub fn ion_spacing(&self) -> f64 {
        ion_spacing(self.omega_com, self.trap.mass)
    }

    pub fn omega_bm(&self) -> f64 {
        breathing_mode(self.omega_com)
    }

    pub fn spec(&self) -> Result<HilbertSpec> {
        HilbertSpec::new(self.fock_cutoff)
    }

    /// Motion of the well when the plant plays `wf`.
    pub fn trajectory(&self, wf: &Waveform) -> Result<Trajectory> {
        extract_trajectory(&self.trap, wf)
    }

    /// Laser noise shared by every gate run, so scans see common draws.
    pub fn noise(&self, noisy: bool) -> NoiseModel {
        NoiseModel {
            sigma_carrier: if noisy { self.sigma_carrier } else { 0.0 },
            seed: derive_seed(self.seed, "laser-noise", 0),
        }
    }

    pub fn child_seed(&self, label: &str, index: u64) -> u64 {
        derive_seed(self.seed, label, index)
    }
}
