use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use tgate::beam::stationary_envelopes;
use tgate::calib::{
    gate_envelopes, measure_point, prepare_transport, run_stationary, run_transport, spin_phase_for, BalanceReport,
    Compensation, CompensationReport, ConfinementReport, DetuningFit, DopplerReport, FidelityReport, FidelitySettings,
    ModeScan, Plant, PreparedTransport, RunSettings, SpectroscopyResult, StarkMatchReport, StationaryRun,
};
use tgate::dynamics::oracle::piecewise_exponential;
use tgate::dynamics::{analytic_ms_reference, calibrate_noise, propagate, ramsey_contrast, EnvelopeSet, GateParams};
use tgate::measure::{
    asymmetry_metric, exact_bell_fidelity, wilson_interval, Readout, ScanPoint, ScanResult,
};
use tgate::phys::{ion_spacing, khz, mhz, to_khz, to_mhz, CA40_ION_MASS, MICRON};
use tgate::qcore::{build_space, overlap_fidelity, Populations, QuantumState, Spin, SpinState};
use tgate::trap::Waveform;

use crate::config::{ExperimentConfig, Mode, ScanParameter};
use crate::output::{Cell, Output, Table};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Calibration(String),
    Integration(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Calibration(_) => 3,
            Failure::Integration(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Calibration(m) => write!(f, "{m}"),
            Failure::Integration(m) => write!(f, "{m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<tgate::Error> for Failure {
    fn from(e: tgate::Error) -> Self {
        use tgate::Error as E;
        match e {
            E::InvalidArgument(_) | E::Parse(_) | E::CutoffTooSmall { .. } => Failure::Config(e.to_string()),
            E::IntegrationFailure { .. } | E::ShotsFailed { .. } | E::OutOfRange { .. } => Failure::Integration(e.to_string()),
            _ => Failure::Calibration(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

pub type Outcome = Result<(), Failure>;

fn pops_cells(p: &Populations) -> Vec<Cell> {
    vec![Cell::F(p.p0), Cell::F(p.p1), Cell::F(p.p2)]
}

fn spectrum_rows(table: &mut Table, label: &str, r: &SpectroscopyResult) {
    for (i, (&d, &s)) in r.detunings.iter().zip(&r.signal).enumerate() {
        let counts = r.bright_counts.get(i).map_or(Cell::S(String::new()), |c| Cell::U(*c));
        table.row(vec![Cell::S(label.into()), Cell::F(to_khz(d)), Cell::F(s), Cell::F(r.fit.eval(d)), counts]);
    }
}

fn spectrum_table() -> Table {
    Table::new(&["scan", "detuning_khz", "bright_fraction", "fit", "bright_counts"])
}

fn write_waveform(out: &mut Output, name: &str, wf: &Waveform) -> Outcome {
    out.text(name, &wf.to_text())?;
    Ok(())
}

// ---------------------------------------------------------------- build-waveform

fn write_preparation(out: &mut Output, plant: &Plant, prep: &PreparedTransport) -> Outcome {
    write_waveform(out, "waveform.txt", &prep.flattened)?;
    write_waveform(out, "waveform_nominal.txt", &prep.nominal)?;

    let rounds = &prep.doppler.rounds;
    let (first, last) = (&rounds[0], &rounds[rounds.len() - 1]);
    let mut t = Table::new(&[
        "segment",
        "t_start_us",
        "t_end_us",
        "doppler_before_khz",
        "doppler_after_khz",
        "doppler_after_sigma_khz",
        "stretch",
    ]);
    for (k, seg) in prep.flattened.segments().iter().enumerate() {
        let (t0, t1) = prep.flattened.segment_window(k);
        t.row(vec![
            Cell::U(k as u64),
            Cell::F(t0 * 1e6),
            Cell::F(t1 * 1e6),
            Cell::F(to_khz(first.segment_doppler[k])),
            Cell::F(to_khz(last.segment_doppler[k])),
            Cell::F(to_khz(last.segment_sigma[k])),
            Cell::F(seg.samples as f64 / prep.nominal.segments()[k].samples as f64),
        ]);
    }
    out.table("doppler_segments.csv", "per-segment carrier Doppler shift before and after flattening", &t)?;

    let mut t = Table::new(&["round", "segment", "doppler_khz", "sigma_khz", "stretch_applied"]);
    for (r, round) in rounds.iter().enumerate() {
        for k in 0..round.segment_doppler.len() {
            t.row(vec![
                Cell::U(r as u64),
                Cell::U(k as u64),
                Cell::F(to_khz(round.segment_doppler[k])),
                Cell::F(to_khz(round.segment_sigma[k])),
                round.factors.get(k).map_or(Cell::F(1.0), |f| Cell::F(*f)),
            ]);
        }
    }
    out.table("doppler_rounds.csv", "Doppler flattening iterations", &t)?;

    let c = &prep.confinement.rounds;
    let mut t = Table::new(&["x_um", "com_before_mhz", "com_after_mhz"]);
    for (a, b) in c[0].profile.iter().zip(&c[c.len() - 1].profile) {
        let f = |o: Option<f64>| o.map_or(Cell::F(f64::NAN), |w| Cell::F(to_mhz(w)));
        t.row(vec![Cell::F(a.x / MICRON), f(a.omega), f(b.omega)]);
    }
    out.table("confinement.csv", "measured COM frequency along the transport", &t)?;

    let mut t = spectrum_table();
    spectrum_rows(&mut t, "before", &prep.full_before);
    spectrum_rows(&mut t, "after", &prep.full_after);
    out.table("full_spectrum.csv", "full-transit carrier spectrum", &t)?;

    let traj = plant.trajectory(&prep.flattened)?;
    let mut t = Table::new(&["t_us", "x_um", "v_m_per_s", "com_mhz"]);
    for j in (0..traj.len()).step_by(20) {
        t.row(vec![
            Cell::F(traj.times[j] * 1e6),
            Cell::F(traj.x[j] / MICRON),
            Cell::F(traj.v[j]),
            Cell::F(to_mhz(traj.omega_com[j])),
        ]);
    }
    out.table("trajectory.csv", "well trajectory of the corrected waveform", &t)?;

    out.summary("doppler_spread_before_khz", to_khz(first.spread));
    out.summary("doppler_spread_after_khz", to_khz(last.spread));
    out.summary("doppler_corrections", rounds.len() - 1);
    out.summary("full_multimodal_before", prep.full_before.multimodal);
    out.summary("full_multimodal_after", prep.full_after.multimodal);
    out.summary("full_width_after_khz", to_khz(prep.full_after.width()));
    out.summary("doppler_reference_khz", to_khz(prep.doppler_reference));
    out.summary("com_deviation_before", c[0].max_deviation);
    out.summary("com_deviation_after", prep.confinement.true_max_deviation);
    Ok(())
}

pub fn build_waveform(cfg: &ExperimentConfig, out: &mut Output) -> Outcome {
    let plant = cfg.plant()?;
    let prep = prepare_transport(&plant, &cfg.pipeline())?;
    write_preparation(out, &plant, &prep)
}

// ---------------------------------------------------------------- gate chains

#[derive(Serialize)]
struct TransportCalibration<'a> {
    compensation: Compensation,
    confinement: &'a ConfinementReport,
    doppler: &'a DopplerReport,
    doppler_reference: f64,
    initial_balance: &'a BalanceReport,
    stark: &'a StarkMatchReport,
    dynamic: &'a Option<CompensationReport>,
    mode_scan: &'a ModeScan,
    detuning: &'a Option<DetuningFit>,
    balance: &'a BalanceReport,
    params: &'a GateParams,
    fidelity: &'a FidelityReport,
}

/// Calibrated gate, ready to be run or scanned.
pub struct Calibrated {
    pub plant: Plant,
    pub env: Arc<EnvelopeSet>,
    pub params: GateParams,
    pub fidelity: FidelityReport,
}

fn params_summary(out: &mut Output, p: &GateParams) {
    out.summary("tau_us", p.tau * 1e6);
    out.summary("delta_m_khz", to_khz(p.delta_m));
    out.summary("delta_g_khz", to_khz(p.delta_g));
    out.summary("rabi_scale", p.rabi_scale);
}

fn stationary_chain(cfg: &ExperimentConfig, fidelity: FidelitySettings, out: &mut Output) -> Result<(Calibrated, StationaryRun), Failure> {
    let plant = cfg.plant()?;
    let s = tgate::calib::PipelineSettings { fidelity, ..cfg.pipeline() };
    let run = run_stationary(&plant, &s)?;
    let mut t = spectrum_table();
    spectrum_rows(&mut t, "blue-reduced", &run.reduced.blue);
    spectrum_rows(&mut t, "red-reduced", &run.reduced.red);
    spectrum_rows(&mut t, "blue-full", &run.full.blue);
    spectrum_rows(&mut t, "red-full", &run.full.red);
    out.table("sidebands.csv", "stationary sideband spectra relative to the bare carrier", &t)?;
    out.json("calibration.json", &run)?;
    out.summary("mode_frequency_khz", to_khz(run.reduced.mode_frequency()));
    out.summary("light_shift_per_power_khz", to_khz(run.shift_per_power));
    let env = Arc::new(stationary_envelopes(&plant.beam, s.stationary_x, plant.ion_spacing(), s.tau)?);
    Ok((Calibrated { plant, env, params: run.params, fidelity: run.fidelity.clone() }, run))
}

fn transport_chain(
    cfg: &ExperimentConfig,
    comp: Compensation,
    fidelity: FidelitySettings,
    out: &mut Output,
) -> Result<Calibrated, Failure> {
    let plant = cfg.plant()?;
    let s = tgate::calib::PipelineSettings { fidelity, ..cfg.pipeline() };
    let prep = prepare_transport(&plant, &s)?;
    let run = run_transport(&plant, &prep, comp, &s)?;
    write_waveform(out, "waveform.txt", &run.waveform)?;

    let mut t = Table::new(&["delta_m_khz", "p0", "p1", "p2", "rabi_scale", "balanced"]);
    for (i, p) in run.mode_scan.scan.points.iter().enumerate() {
        let mut row = vec![Cell::F(to_khz(p.value))];
        row.extend(pops_cells(&p.populations));
        row.push(Cell::F(run.mode_scan.scales[i]));
        row.push(Cell::U(u64::from(run.mode_scan.balanced[i])));
        t.row(row);
    }
    out.table("mode_scan.csv", "balanced mode-detuning scan", &t)?;

    if let Some(fit) = &run.detuning {
        let mut t = Table::new(&["delta_g_khz", "p0", "p1", "p2"]);
        for p in &fit.scan.points {
            let mut row = vec![Cell::F(to_khz(p.value))];
            row.extend(pops_cells(&p.populations));
            t.row(row);
        }
        out.table("detuning_scan.csv", "global-detuning scan of the final round", &t)?;
        out.summary("delta_g_fit_khz", to_khz(fit.best));
    }

    let light = run.dynamic.as_ref().map_or(&run.stark.profile, |d| &d.light_shifts);
    let mut t = Table::new(&["segment", "doppler_khz", "light_shift_khz", "stretch"]);
    for k in 0..light.shifts.len() {
        let stretch = run.dynamic.as_ref().map_or(1.0, |d| d.factors[k]);
        t.row(vec![Cell::U(k as u64), Cell::F(to_khz(light.doppler[k])), Cell::F(to_khz(light.shifts[k])), Cell::F(stretch)]);
    }
    out.table("light_shifts.csv", "per-segment light shift at the gate power", &t)?;

    out.json(
        "calibration.json",
        &TransportCalibration {
            compensation: comp,
            confinement: &prep.confinement,
            doppler: &prep.doppler,
            doppler_reference: prep.doppler_reference,
            initial_balance: &run.initial_balance,
            stark: &run.stark,
            dynamic: &run.dynamic,
            mode_scan: &run.mode_scan,
            detuning: &run.detuning,
            balance: &run.balance,
            params: &run.params,
            fidelity: &run.fidelity,
        },
    )?;
    out.summary("stark_coeff_s", run.stark.kappa);
    out.summary("doppler_spread_after_khz", to_khz(prep.doppler.rounds.last().map_or(f64::NAN, |r| r.spread)));
    if let Some(d) = &run.dynamic {
        out.summary("residual_light_shift_mean_hz", to_khz(d.residual.weighted_mean) * 1e3);
        out.summary("residual_light_shift_abs_hz", to_khz(d.residual.weighted_abs) * 1e3);
    }

    let mut matched = plant.clone();
    matched.beam.stark_coeff = run.stark.kappa;
    let env = gate_envelopes(&matched, &run.waveform, prep.doppler_reference, s.stride)?;
    Ok(Calibrated { plant: matched, env, params: run.params, fidelity: run.fidelity })
}

fn calibrate_mode(cfg: &ExperimentConfig, fidelity: FidelitySettings, out: &mut Output) -> Result<Calibrated, Failure> {
    let mode = cfg.run.mode;
    out.summary("mode", mode.name());
    let cal = match mode {
        Mode::Stationary => stationary_chain(cfg, fidelity, out)?.0,
        Mode::TransportStatic | Mode::TransportDynamic => {
            let comp = if mode == Mode::TransportStatic { Compensation::Static } else { Compensation::Dynamic };
            let cal = transport_chain(cfg, comp, fidelity, out)?;
            // reference power from a stationary calibration of the same plant
            let quick = FidelitySettings { ensemble: 1, noisy: false, readout: Readout::Exact, phases: 3 };
            let plant = cfg.plant()?;
            let s = tgate::calib::PipelineSettings { fidelity: quick, ..cfg.pipeline() };
            let st = run_stationary(&plant, &s)?;
            out.summary("intensity_ratio_to_stationary", (cal.params.rabi_scale / st.params.rabi_scale).powi(2));
            cal
        }
    };
    params_summary(out, &cal.params);
    Ok(cal)
}

fn noiseless_check() -> FidelitySettings {
    FidelitySettings { ensemble: 1, noisy: false, readout: Readout::Exact, phases: 16 }
}

pub fn calibrate(cfg: &ExperimentConfig, out: &mut Output) -> Outcome {
    let cal = calibrate_mode(cfg, noiseless_check(), out)?;
    out.summary("noiseless_fidelity", cal.fidelity.estimate.fidelity);
    Ok(())
}

pub fn run_gate(cfg: &ExperimentConfig, out: &mut Output) -> Outcome {
    let cal = calibrate_mode(cfg, cfg.fidelity(), out)?;
    let f = &cal.fidelity;
    let mut t = Table::new(&["phase_rad", "parity", "parity_sigma", "n0", "n1", "n2"]);
    for (k, (&phi, &pi)) in f.parity.phases.iter().zip(&f.parity.parity).enumerate() {
        let counts: Vec<Cell> = match f.parity.records.get(k) {
            Some(r) => r.counts.iter().map(|c| Cell::U(*c)).collect(),
            None => (0..3).map(|_| Cell::S(String::new())).collect(),
        };
        let mut row = vec![Cell::F(phi), Cell::F(pi), Cell::F(f.parity.parity_sigma[k])];
        row.extend(counts);
        t.row(row);
    }
    out.table("parity.csv", "parity scan after the gate", &t)?;
    let e = &f.estimate;
    let mut t = Table::new(&["p0", "p1", "p2", "n0", "n1", "n2", "amplitude", "amplitude_sigma", "fidelity", "fidelity_sigma"]);
    let counts: Vec<Cell> = match &f.record {
        Some(r) => r.counts.iter().map(|c| Cell::U(*c)).collect(),
        None => (0..3).map(|_| Cell::S(String::new())).collect(),
    };
    let mut row = pops_cells(&f.populations);
    row.extend(counts);
    row.extend([Cell::F(e.amplitude), Cell::F(e.amplitude_sigma), Cell::F(e.fidelity), Cell::F(e.fidelity_sigma)]);
    t.row(row);
    out.table("fidelity.csv", "Bell-state fidelity F = (P0 + P2 + A)/2", &t)?;
    out.json("fidelity.json", f)?;
    out.summary("fidelity", e.fidelity);
    out.summary("fidelity_sigma", e.fidelity_sigma);
    out.summary("parity_amplitude", e.amplitude);
    println!("{}: F = {:.4} +- {:.4}", cfg.run.mode.name(), e.fidelity, e.fidelity_sigma);
    Ok(())
}

// ---------------------------------------------------------------- scan

pub fn scan(cfg: &ExperimentConfig, out: &mut Output) -> Outcome {
    let grid = cfg.scan_grid().map_err(Failure::Config)?;
    if grid.is_empty() {
        return Err(Failure::Config("scan grid is empty".into()));
    }
    let cal = calibrate_mode(cfg, noiseless_check(), out)?;
    let sc = &cfg.scan;
    let residual = khz(sc.residual_stark_hz * 1e-3);
    let run = RunSettings {
        ensemble: if sc.noisy { cfg.gate.ensemble } else { 1 },
        noisy: sc.noisy,
        readout: if sc.shots == 0 { Readout::Exact } else { Readout::Sampled { shots: sc.shots } },
    };
    let base = cal.params;
    let fixed_m = sc.delta_m_khz.map_or(base.delta_m, khz);
    let fixed_g = sc.delta_g_khz.map_or(base.delta_g, khz);
    let points: Vec<ScanPoint> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let (dm, dg) = match sc.parameter {
                ScanParameter::DeltaM => (v, fixed_g),
                ScanParameter::DeltaG => (fixed_m, v),
            };
            let p = GateParams { delta_m: dm, delta_g: dg - residual, spin_phase: spin_phase_for(dm), ..base };
            measure_point(&cal.plant, &cal.env, &p, &run, v, cal.plant.child_seed("scan", i as u64))
        })
        .collect::<tgate::Result<_>>()?;
    let name = match sc.parameter {
        ScanParameter::DeltaM => "delta_m",
        ScanParameter::DeltaG => "delta_g",
    };
    let result = ScanResult { parameter: name.into(), points };

    let mut t = Table::new(&[
        &format!("{name}_khz"),
        "p0",
        "p1",
        "p2",
        "p0_low",
        "p0_high",
        "p1_low",
        "p1_high",
        "p2_low",
        "p2_high",
        "n0",
        "n1",
        "n2",
    ]);
    for p in &result.points {
        let mut row = vec![Cell::F(to_khz(p.value))];
        row.extend(pops_cells(&p.populations));
        let vals = p.populations.as_array();
        match &p.record {
            Some(r) => {
                for k in 0..3 {
                    let (lo, hi) = wilson_interval(r.counts[k], r.shots);
                    row.extend([Cell::F(lo), Cell::F(hi)]);
                }
                row.extend(r.counts.iter().map(|c| Cell::U(*c)));
            }
            None => {
                for v in vals {
                    row.extend([Cell::F(v), Cell::F(v)]);
                }
                row.extend((0..3).map(|_| Cell::S(String::new())));
            }
        }
        t.row(row);
    }
    out.table("scan.csv", &format!("population scan over {name}; 68% Wilson intervals"), &t)?;

    let p1: Vec<f64> = result.points.iter().map(|p| p.populations.p1).collect();
    let minima: Vec<f64> = (1..p1.len().saturating_sub(1))
        .filter(|&i| p1[i] < p1[i - 1] && p1[i] <= p1[i + 1])
        .map(|i| to_khz(result.points[i].value))
        .collect();
    out.summary("scan_parameter", name);
    out.summary("residual_stark_hz", sc.residual_stark_hz);
    out.summary("p1_local_minima_khz", minima);
    if let Some(best) = result.argmin_p1() {
        out.summary("argmin_p1_khz", to_khz(best));
    }
    if let Ok(a) = asymmetry_metric(&result) {
        out.summary("asymmetry_metric", a);
    }
    Ok(())
}

// ---------------------------------------------------------------- selftest

struct Check {
    name: &'static str,
    value: f64,
    limit: String,
    pass: bool,
}

fn oracle_error(seed: u64, draws: usize) -> tgate::Result<f64> {
    let (spec, ops) = build_space(6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let tau = 50e-6;
        let env = EnvelopeSet::constant(tau, khz(rng.random_range(20.0..200.0)), khz(rng.random_range(20.0..200.0)), khz(rng.random_range(-5.0..5.0)))?;
        let params = GateParams {
            tau,
            delta_m: khz(rng.random_range(-30.0..30.0)),
            delta_g: khz(rng.random_range(-5.0..5.0)),
            omega_bm: mhz(2.45),
            eta_bm: 0.042,
            spin_phase: rng.random_range(0.0..std::f64::consts::TAU),
            rabi_scale: rng.random_range(0.5..1.5),
        };
        let start = QuantumState::basis(spec, Spin::S, Spin::S, rng.random_range(0..3));
        let fast = propagate(&start, &params, &env, 1e-10)?;
        let brute = piecewise_exponential(&ops, &start, &params, &env, 1e-9)?;
        worst = worst.max(fast.max_distance(&brute));
    }
    Ok(worst)
}

pub fn selftest(cfg: &ExperimentConfig, out: &mut Output) -> Outcome {
    let mut checks = Vec::new();

    let err = oracle_error(cfg.run.seed, 3)?;
    checks.push(Check { name: "propagator_vs_piecewise_exponential", value: err, limit: "< 1e-8".into(), pass: err < 1e-8 });

    let (spec, _) = build_space(15)?;
    let params = GateParams {
        tau: 160e-6,
        delta_m: khz(12.5),
        delta_g: 0.0,
        omega_bm: mhz(2.45),
        eta_bm: 0.042,
        spin_phase: std::f64::consts::FRAC_PI_2,
        rabi_scale: 1.0,
    };
    let r = analytic_ms_reference(&params, 1.0)?;
    let env = EnvelopeSet::constant(params.tau, r.ideal_rabi, r.ideal_rabi, 0.0)?;
    let psi = propagate(&QuantumState::basis(spec, Spin::S, Spin::S, 0), &params, &env, 1e-9)?;
    let f = overlap_fidelity(&psi, &SpinState::bell_target());
    checks.push(Check { name: "analytic_loop_closure_bell_fidelity", value: f, limit: "> 0.9999".into(), pass: f > 0.9999 });

    let d = to_khz(tgate::beam::BeamModel::default().doppler_shift(0.5));
    checks.push(Check { name: "doppler_shift_0.5m_per_s_khz", value: d, limit: "485.0 +- 0.1".into(), pass: (d - 485.0).abs() <= 0.1 });

    let sigma = calibrate_noise(0.014, 160e-6)?;
    let loss = 1.0 - ramsey_contrast(sigma, 160e-6)?;
    checks.push(Check { name: "ramsey_loss_at_160us", value: loss, limit: "0.014 +- 0.001".into(), pass: (loss - 0.014).abs() <= 1e-3 });

    let spacing = ion_spacing(mhz(1.41), CA40_ION_MASS) / MICRON;
    checks.push(Check { name: "ion_spacing_um", value: spacing, limit: "4.5 +- 0.1".into(), pass: (spacing - 4.5).abs() <= 0.1 });

    let est = exact_bell_fidelity(&Populations { p0: 0.5, p1: 0.0, p2: 0.5 }, 0.94);
    checks.push(Check { name: "fidelity_formula", value: est.fidelity, limit: "0.97 +- 1e-12".into(), pass: (est.fidelity - 0.97).abs() < 1e-12 });

    let mut t = Table::new(&["check", "value", "limit", "pass"]);
    for c in &checks {
        t.row(vec![Cell::S(c.name.into()), Cell::F(c.value), Cell::S(c.limit.clone()), Cell::U(u64::from(c.pass))]);
        println!("{} {} = {:.6e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
    }
    out.table("selftest.csv", "oracle self-test", &t)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    out.summary("checks", checks.len());
    out.summary("failed", &failed);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Integration(format!("self-test failed: {}", failed.join(", "))))
    }
}
