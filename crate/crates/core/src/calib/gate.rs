//! Gate-level calibrations: detuning scans, power balancing and fidelity.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Plant;
use crate::dynamics::{run_shots, EnvelopeSet, GateParams, GateSetup};
use crate::measure::{
    bell_fidelity, default_phases, exact_bell_fidelity, expected_populations, parity_scan, sample_shots, FidelityEstimate,
    MeasurementRecord, ParityScan, Readout, ScanPoint, ScanResult,
};
use crate::numeric::{brent, parabolic_vertex};
use crate::qcore::{Populations, QuantumState};
use crate::{Error, Result};

/// How a gate is run and read out at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Simulated shots in the ensemble.
    pub ensemble: usize,
    /// Whether the plant's laser noise is applied.
    pub noisy: bool,
    pub readout: Readout,
}

impl RunSettings {
    /// Single noiseless run read out without projection noise.
    pub fn exact() -> Self {
        RunSettings { ensemble: 1, noisy: false, readout: Readout::Exact }
    }
}

/// Force phase that gives the (|SS⟩ − i|DD⟩)/√2 target for the sign of δm.
pub fn spin_phase_for(delta_m: f64) -> f64 {
    if delta_m >= 0.0 {
        FRAC_PI_2
    } else {
        0.0
    }
}

fn run_ensemble(plant: &Plant, env: &Arc<EnvelopeSet>, params: &GateParams, settings: &RunSettings) -> Result<Vec<QuantumState>> {
    let setup = GateSetup { spec: plant.spec()?, params: *params, env: Arc::clone(env), nbar: plant.nbar, tol: plant.tol };
    run_shots(&setup, &plant.noise(settings.noisy), settings.ensemble)
}

/// Runs the gate once per ensemble member and reads out the populations.
pub fn measure_point(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    params: &GateParams,
    settings: &RunSettings,
    value: f64,
    seed: u64,
) -> Result<ScanPoint> {
    let states = run_ensemble(plant, env, params, settings)?;
    Ok(match settings.readout {
        Readout::Exact => ScanPoint { value, populations: expected_populations(&states), sigma: [0.0; 3], record: None },
        Readout::Sampled { shots } => {
            let rec = sample_shots(&states, shots, seed)?;
            ScanPoint { value, populations: rec.populations(), sigma: rec.sigmas(), record: Some(rec) }
        }
    })
}

fn p1(plant: &Plant, env: &Arc<EnvelopeSet>, params: &GateParams, settings: &RunSettings, seed: u64) -> Result<Populations> {
    Ok(measure_point(plant, env, params, settings, 0.0, seed)?.populations)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSettings {
    /// Search bracket on the global power scale.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Coarse steps used to find the first P0 = P2 crossing.
    pub coarse_steps: usize,
    pub xtol: f64,
    /// Shots that set the acceptance band |P0 − P2| < 2/√shots.
    pub shots: u64,
    pub run: RunSettings,
}

impl BalanceSettings {
    pub fn new(scale_min: f64, scale_max: f64) -> Self {
        BalanceSettings { scale_min, scale_max, coarse_steps: 12, xtol: 1e-5, shots: 500, run: RunSettings::exact() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub scale: f64,
    pub populations: Populations,
    pub evaluations: usize,
}

/// Finds the smallest power scale in the bracket at which P0 = P2.
pub fn balance_power(plant: &Plant, env: &Arc<EnvelopeSet>, params: &GateParams, bs: &BalanceSettings) -> Result<BalanceReport> {
    if !(bs.scale_min >= 0.0 && bs.scale_max > bs.scale_min) || bs.coarse_steps == 0 {
        return Err(Error::invalid("balance bracket must satisfy 0 <= min < max with at least one step"));
    }
    let seed = plant.child_seed("balance", 0);
    let mut evaluations = 0;
    let mut imbalance = |s: f64| -> Result<f64> {
        evaluations += 1;
        let p = p1(plant, env, &GateParams { rabi_scale: s, ..*params }, &bs.run, seed)?;
        Ok(p.p0 - p.p2)
    };
    let h = (bs.scale_max - bs.scale_min) / bs.coarse_steps as f64;
    let mut lo = bs.scale_min;
    let mut f_lo = imbalance(lo)?;
    let mut bracket = None;
    for k in 1..=bs.coarse_steps {
        let hi = bs.scale_min + k as f64 * h;
        let f_hi = imbalance(hi)?;
        if f_lo <= 0.0 && f_hi > 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        f_lo = f_hi;
    }
    let (a, b) = bracket.ok_or_else(|| {
        Error::CalibrationFailure(format!(
            "P0 never exceeds P2 for rabi_scale in [{}, {}]",
            bs.scale_min, bs.scale_max
        ))
    })?;
    let scale = brent(&mut imbalance, a, b, bs.xtol, 100)?;
    let pops = p1(plant, env, &GateParams { rabi_scale: scale, ..*params }, &bs.run, seed)?;
    let band = 2.0 / (bs.shots.max(1) as f64).sqrt();
    if (pops.p0 - pops.p2).abs() >= band {
        return Err(Error::CalibrationFailure(format!(
            "balance left |P0 - P2| = {:.4}, band is {band:.4}",
            (pops.p0 - pops.p2).abs()
        )));
    }
    Ok(BalanceReport { scale, populations: pops, evaluations: evaluations + 1 })
}

fn scan_with<F>(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    base: &GateParams,
    values: &[f64],
    settings: &RunSettings,
    parameter: &str,
    set: F,
) -> Result<ScanResult>
where
    F: Fn(&mut GateParams, f64) + Sync,
{
    if values.is_empty() {
        return Err(Error::invalid(format!("empty {parameter} scan grid")));
    }
    let points = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut p = *base;
            set(&mut p, v);
            measure_point(plant, env, &p, settings, v, plant.child_seed(parameter, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult { parameter: parameter.to_string(), points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScan {
    pub scan: ScanResult,
    /// Power scale used at each point.
    pub scales: Vec<f64>,
    /// Whether P0 = P2 was reached at each point (always true without balancing).
    pub balanced: Vec<bool>,
    /// δm with the lowest P1 among balanced points.
    pub best: f64,
}

/// Scans δm. With `balance` set, the power is rebalanced at every point
/// before measuring; points that cannot be balanced run at the upper power
/// limit and are excluded from the optimum.
pub fn scan_mode_detuning(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    base: &GateParams,
    grid: &[f64],
    settings: &RunSettings,
    balance: Option<&BalanceSettings>,
) -> Result<ModeScan> {
    if grid.is_empty() {
        return Err(Error::invalid("empty delta_m scan grid"));
    }
    let set_dm = |p: &mut GateParams, dm: f64| {
        p.delta_m = dm;
        p.spin_phase = spin_phase_for(dm);
    };
    let (scales, balanced): (Vec<f64>, Vec<bool>) = match balance {
        None => (vec![base.rabi_scale; grid.len()], vec![true; grid.len()]),
        Some(bs) => grid
            .par_iter()
            .map(|&dm| {
                let mut p = *base;
                set_dm(&mut p, dm);
                match balance_power(plant, env, &p, bs) {
                    Ok(r) => Ok((r.scale, true)),
                    Err(Error::CalibrationFailure(_)) => Ok((bs.scale_max, false)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
    };
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(i, &dm)| {
            let mut p = GateParams { rabi_scale: scales[i], ..*base };
            set_dm(&mut p, dm);
            measure_point(plant, env, &p, settings, dm, plant.child_seed("delta_m", i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .zip(&balanced)
        .filter(|(_, ok)| **ok)
        .min_by(|a, b| a.0.populations.p1.total_cmp(&b.0.populations.p1))
        .map(|(p, _)| p.value)
        .ok_or_else(|| Error::CalibrationFailure("no scan point could be balanced".into()))?;
    Ok(ModeScan { scan: ScanResult { parameter: "delta_m".into(), points }, scales, balanced, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningFit {
    pub scan: ScanResult,
    /// Grid point with the lowest P1.
    pub discrete_best: f64,
    /// Vertex of the parabola through the minimum and its neighbours.
    pub best: f64,
}

/// Scans δg on a uniform grid and refines the P1 minimum with a parabola.
pub fn scan_global_detuning(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    params: &GateParams,
    grid: &[f64],
    settings: &RunSettings,
) -> Result<DetuningFit> {
    if grid.len() < 3 {
        return Err(Error::invalid("delta_g scan needs at least three points"));
    }
    let h = grid[1] - grid[0];
    if !(h > 0.0) || grid.windows(2).any(|w| ((w[1] - w[0]) / h - 1.0).abs() > 1e-6) {
        return Err(Error::invalid("delta_g grid must be uniform and increasing"));
    }
    let scan = scan_with(plant, env, params, grid, settings, "delta_g", |p, v| p.delta_g = v)?;
    let y: Vec<f64> = scan.points.iter().map(|p| p.populations.p1).collect();
    let i = y.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("grid is non-empty");
    if i == 0 || i == y.len() - 1 {
        return Err(Error::RescanRequired(format!("P1 minimum at the grid edge, delta_g = {:.1} rad/s", grid[i])));
    }
    let best = parabolic_vertex(grid[i], h, y[i - 1], y[i], y[i + 1]);
    Ok(DetuningFit { scan, discrete_best: grid[i], best })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelitySettings {
    pub ensemble: usize,
    pub noisy: bool,
    pub readout: Readout,
    /// Analysis phases spread over [0, π).
    pub phases: usize,
}

impl Default for FidelitySettings {
    fn default() -> Self {
        FidelitySettings { ensemble: 500, noisy: true, readout: Readout::Sampled { shots: 500 }, phases: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub params: GateParams,
    pub populations: Populations,
    /// Raw counts behind `populations`; absent for exact readout.
    pub record: Option<MeasurementRecord>,
    pub parity: ParityScan,
    pub estimate: FidelityEstimate,
}

/// Runs the gate ensemble, reads out populations and a parity scan, and
/// combines them into a Bell-state fidelity.
pub fn estimate_fidelity(
    plant: &Plant,
    env: &Arc<EnvelopeSet>,
    params: &GateParams,
    fs: &FidelitySettings,
) -> Result<FidelityReport> {
    let run = RunSettings { ensemble: fs.ensemble, noisy: fs.noisy, readout: fs.readout };
    let states = run_ensemble(plant, env, params, &run)?;
    let parity = parity_scan(&states, &default_phases(fs.phases), fs.readout, plant.child_seed("parity", 0))?;
    let (populations, record, estimate) = match fs.readout {
        Readout::Exact => {
            let pops = expected_populations(&states);
            (pops, None, exact_bell_fidelity(&pops, parity.amplitude))
        }
        Readout::Sampled { shots } => {
            let rec = sample_shots(&states, shots, plant.child_seed("populations", 0))?;
            let est = bell_fidelity(&rec, parity.amplitude, parity.amplitude_sigma)?;
            (rec.populations(), Some(rec), est)
        }
    };
    Ok(FidelityReport { params: *params, populations, record, parity, estimate })
}
