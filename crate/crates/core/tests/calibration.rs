use std::sync::{Arc, OnceLock};

use tgate::beam::stationary_envelopes;
use tgate::calib::{
    balance_power, calibrate_sidebands, carrier_spectroscopy, dynamic_stark_compensation, estimate_fidelity,
    flatten_confinement, flatten_doppler, prepare_transport, scan_global_detuning, segment_light_shifts, spin_phase_for,
    BalanceSettings, ComSettings, DopplerSettings, FidelitySettings, LightShiftProfile, PipelineSettings, Plant,
    PreparedTransport, ProbeSettings, SidebandSource, Window,
};
use tgate::dynamics::{analytic_ms_reference, GateParams};
use tgate::measure::Readout;
use tgate::phys::{khz, mhz, to_khz};
use tgate::trap::ErrorProfile;
use tgate::Error;

fn imperfect_plant() -> Plant {
    let mut plant = Plant::ideal();
    plant.trap = ErrorProfile::default().realize(&plant.trap, &ComSettings::default().positions, mhz(1.41)).unwrap();
    plant
}

fn exact_probe() -> ProbeSettings {
    ProbeSettings { readout: Readout::Exact, ..ProbeSettings::default() }
}

fn settings(n_segments: usize) -> PipelineSettings {
    let mut s = PipelineSettings::default();
    s.plan.n_segments = n_segments;
    let widen = n_segments as f64 / 8.0;
    s.doppler.half_span *= widen;
    s.doppler.step *= widen;
    if n_segments != 8 {
        s.probe = exact_probe();
    }
    s
}

fn prepared() -> &'static (Plant, PreparedTransport) {
    static PREP: OnceLock<(Plant, PreparedTransport)> = OnceLock::new();
    PREP.get_or_init(|| {
        let plant = imperfect_plant();
        let prep = prepare_transport(&plant, &settings(8)).unwrap();
        (plant, prep)
    })
}

fn stationary_params(plant: &Plant, delta_g: f64, scale: f64) -> GateParams {
    GateParams {
        tau: 160e-6,
        delta_m: khz(12.5),
        delta_g,
        omega_bm: plant.omega_bm(),
        eta_bm: plant.eta_bm,
        spin_phase: spin_phase_for(khz(12.5)),
        rabi_scale: scale,
    }
}

#[test]
fn ideal_plant_needs_no_correction() {
    let plant = Plant::ideal();
    let s = settings(8);
    let (_, prep) = (&plant, prepare_transport(&plant, &s).unwrap());
    assert_eq!(prep.confinement.rounds.len(), 1);
    assert!(prep.confinement.rounds[0].factors.is_empty());
    assert_eq!(prep.doppler.rounds.len(), 1, "{:?}", prep.doppler.rounds[0].segment_doppler);
    assert_eq!(prep.flattened.frames(), prep.nominal.frames());
}

#[test]
fn confinement_is_flattened_below_two_per_mille() {
    let (_, prep) = prepared();
    let first = prep.confinement.rounds[0].max_deviation;
    assert!((first - 0.046).abs() < 3e-3, "{first}");
    assert!(prep.confinement.true_max_deviation <= 2e-3, "{}", prep.confinement.true_max_deviation);
}

#[test]
fn doppler_staircase_is_flattened() {
    let (_, prep) = prepared();
    let rounds = &prep.doppler.rounds;
    let before = rounds[0].spread;
    let after = rounds.last().unwrap().spread;
    assert!(before >= khz(20.0), "initial spread {} kHz", to_khz(before));
    assert!(after <= khz(2.0), "final spread {} kHz", to_khz(after));
    assert!(rounds.len() - 1 <= 5, "{} corrections", rounds.len() - 1);
    assert!(prep.full_before.multimodal);
    assert!(!prep.full_after.multimodal);
    assert!(prep.full_after.width() < 0.4 * before, "width {} kHz", to_khz(prep.full_after.width()));
    assert!((to_khz(prep.doppler_reference) - 485.0).abs() < 3.0, "{}", to_khz(prep.doppler_reference));
}

#[test]
fn flattening_a_flat_waveform_changes_nothing() {
    let (plant, prep) = prepared();
    let target = plant.beam.doppler_shift(settings(8).plan.velocity());
    let (again, report) =
        flatten_doppler(plant, &prep.flattened, &DopplerSettings::new(target), &ProbeSettings::default(), 99).unwrap();
    assert_eq!(report.rounds.len(), 1);
    assert_eq!(again.frames(), prep.flattened.frames());
    let (_, conf) = flatten_confinement(plant, &prep.flattened, mhz(1.41), &ComSettings::default(), 7).unwrap();
    assert!(conf.true_max_deviation <= 2e-3);
    let touched = conf.rounds.iter().flat_map(|r| &r.factors).map(|f| (f - 1.0).abs()).fold(0.0, f64::max);
    assert!(touched < 1e-2, "re-flattening moved a factor by {touched}");
}

#[test]
fn stationary_sidebands_sit_at_the_breathing_mode() {
    let mut plant = Plant::ideal();
    plant.beam.stark_coeff = 0.0;
    let report = calibrate_sidebands(
        &plant,
        SidebandSource::Stationary { x: 0.0, duration: 160e-6 },
        0.25,
        0.0,
        khz(15.0),
        khz(0.25),
        &ProbeSettings::default(),
        3,
    )
    .unwrap();
    assert!((report.omega_b - plant.omega_bm()).abs() < khz(0.1), "{} Hz", to_khz(report.omega_b - plant.omega_bm()) * 1e3);
    assert!((report.mode_frequency() - plant.omega_bm()).abs() < khz(0.1));
}

#[test]
fn transport_sidebands_follow_the_carrier_doppler_shift() {
    let (plant, prep) = prepared();
    let traj = plant.trajectory(&prep.flattened).unwrap();
    let probe = exact_probe();
    let window = Window::Segment(4);
    let scale = 0.25;
    let grid: Vec<f64> = (-60..=60).map(|k| prep.doppler_reference + khz(0.5 * k as f64)).collect();
    let carrier = carrier_spectroscopy(plant, &prep.flattened, &traj, window, Some(scale), &grid, &probe, 1).unwrap();
    let sb = calibrate_sidebands(
        plant,
        SidebandSource::Transport { wf: &prep.flattened, traj: &traj, window },
        scale,
        carrier.center(),
        khz(40.0),
        khz(1.0),
        &probe,
        1,
    )
    .unwrap();
    assert!((sb.common_shift() - carrier.center()).abs() < khz(0.5), "{} kHz", to_khz(sb.common_shift() - carrier.center()));
}

#[test]
fn balance_lands_on_the_analytic_power() {
    let mut plant = Plant::ideal();
    plant.beam.stark_coeff = 0.0;
    let env = Arc::new(stationary_envelopes(&plant.beam, 0.0, plant.ion_spacing(), 160e-6).unwrap());
    let params = stationary_params(&plant, 0.0, 1.0);
    let b = balance_power(&plant, &env, &params, &BalanceSettings::new(0.3, 3.0)).unwrap();
    let ideal = analytic_ms_reference(&params, env.omega_1()[0]).unwrap().ideal_rabi;
    assert!((b.scale * env.omega_1()[0] / ideal - 1.0).abs() < 0.01, "scale {}", b.scale);
    let fs = FidelitySettings { ensemble: 1, noisy: false, readout: Readout::Exact, phases: 16 };
    let f = estimate_fidelity(&plant, &env, &GateParams { rabi_scale: b.scale, ..params }, &fs).unwrap();
    assert!(f.estimate.fidelity >= 0.995, "{}", f.estimate.fidelity);
}

#[test]
fn global_detuning_recovers_a_constant_light_shift() {
    let plant = Plant::ideal();
    let env = Arc::new(stationary_envelopes(&plant.beam, 0.0, plant.ion_spacing(), 160e-6).unwrap());
    let ideal = analytic_ms_reference(&stationary_params(&plant, 0.0, 1.0), env.omega_1()[0]).unwrap().ideal_rabi;
    let scale = ideal / env.omega_1()[0];
    let shift = env.stark()[0] * scale * scale;
    let grid: Vec<f64> = (-15..=15).map(|k| shift + khz(0.2 * k as f64)).collect();
    let run = tgate::calib::RunSettings::exact();
    let fit = scan_global_detuning(&plant, &env, &stationary_params(&plant, 0.0, scale), &grid, &run).unwrap();
    assert!((fit.best - shift).abs() <= khz(0.2), "{} vs {} kHz", to_khz(fit.best), to_khz(shift));

    let mut dark = plant.clone();
    dark.beam.stark_coeff = 0.0;
    let env = Arc::new(stationary_envelopes(&dark.beam, 0.0, dark.ion_spacing(), 160e-6).unwrap());
    let grid: Vec<f64> = (-15..=15).map(|k| khz(0.2 * k as f64)).collect();
    let fit = scan_global_detuning(&dark, &env, &stationary_params(&dark, 0.0, scale), &grid, &run).unwrap();
    assert!(fit.best.abs() <= khz(0.2), "{} kHz", to_khz(fit.best));
}

#[test]
fn no_light_shift_leaves_the_waveform_alone() {
    let (plant, prep) = prepared();
    let mut dark = plant.clone();
    dark.beam.stark_coeff = 0.0;
    let ds = DopplerSettings::new(prep.doppler_reference);
    let light = segment_light_shifts(&dark, &prep.flattened, 1.9, &ds, &exact_probe(), 5).unwrap();
    assert!(light.shifts.iter().all(|s| *s == 0.0));
    let (out, report) = dynamic_stark_compensation(&dark, &prep.flattened, &light, 0.2).unwrap();
    assert!(report.factors.iter().all(|f| *f == 1.0));
    assert_eq!(out.frames(), prep.flattened.frames());
}

fn residual_for(n_segments: usize) -> tgate::calib::StarkResidual {
    let mut plant = imperfect_plant();
    plant.beam.stark_coeff = 1.79e-8;
    let s = settings(n_segments);
    let prep = if n_segments == 8 { prepared().1.clone() } else { prepare_transport(&plant, &s).unwrap() };
    let ds = DopplerSettings { target: prep.doppler_reference, ..s.doppler };
    let light = segment_light_shifts(&plant, &prep.flattened, 1.9, &ds, &exact_probe(), 11).unwrap();
    dynamic_stark_compensation(&plant, &prep.flattened, &light, 0.2).unwrap().1.residual
}

#[test]
fn finer_segments_track_the_light_shift_better() {
    let coarse = residual_for(8);
    let fine = residual_for(32);
    assert!(coarse.weighted_mean.abs() <= khz(0.15), "{} Hz", to_khz(coarse.weighted_mean) * 1e3);
    assert!(fine.weighted_abs < coarse.weighted_abs, "{} vs {} Hz", to_khz(fine.weighted_abs) * 1e3, to_khz(coarse.weighted_abs) * 1e3);
}

#[test]
fn oversized_velocity_change_is_refused() {
    let (plant, prep) = prepared();
    let n = prep.flattened.segments().len();
    let doppler = vec![khz(485.0); n];
    let mut shifts = vec![khz(1.0); n];
    shifts[3] = khz(0.25 * 485.0);
    let light = LightShiftProfile { scale: 1.0, doppler, shifts, sigmas: vec![0.0; n] };
    match dynamic_stark_compensation(plant, &prep.flattened, &light, 0.2) {
        Err(Error::InfeasibleCompensation(msg)) => assert!(msg.contains("segment 3"), "{msg}"),
        other => panic!("expected infeasible compensation, got {:?}", other.map(|_| ())),
    }
}
