use proptest::prelude::*;
use rayon::prelude::*;

use tgate::beam::{stationary_envelopes, BeamModel};
use tgate::calib::spin_phase_for;
use tgate::dynamics::{analytic_ms_reference, propagate, EnvelopeSet, GateParams};
use tgate::measure::{asymmetry_metric, asymmetry_within, max_mirror_difference, ScanPoint, ScanResult};
use tgate::phys::{breathing_mode, ion_spacing, khz, mhz, to_khz, CA40_ION_MASS};
use tgate::qcore::{build_space, populations, Populations, QuantumState, Spin};

const TAU: f64 = 160e-6;

struct Bench {
    env: EnvelopeSet,
    stark: f64,
    scale: f64,
}

/// Beam-centred stationary pair driven at the analytic power for δm = 2/τ.
fn bench() -> Bench {
    let beam = BeamModel::default();
    let d = ion_spacing(mhz(1.41), CA40_ION_MASS);
    let env = stationary_envelopes(&beam, 0.0, d, TAU).unwrap();
    let rabi = env.omega_1()[0];
    let r = analytic_ms_reference(&params(khz(12.5), 0.0, 1.0), rabi).unwrap();
    let scale = r.ideal_rabi / rabi;
    // light shift at the driven power
    Bench { stark: env.stark()[0] * scale * scale, scale, env }
}

fn params(delta_m: f64, delta_g: f64, scale: f64) -> GateParams {
    GateParams {
        tau: TAU,
        delta_m,
        delta_g,
        omega_bm: breathing_mode(mhz(1.41)),
        eta_bm: 0.042,
        spin_phase: spin_phase_for(delta_m),
        rabi_scale: scale,
    }
}

fn run(cutoff: usize, env: &EnvelopeSet, p: &GateParams) -> QuantumState {
    let (spec, _) = build_space(cutoff).unwrap();
    propagate(&QuantumState::basis(spec, Spin::S, Spin::S, 0), p, env, 1e-9).unwrap()
}

fn pops(env: &EnvelopeSet, p: &GateParams) -> Populations {
    populations(&run(15, env, p))
}

fn scan(b: &Bench, grid: &[f64], delta_g: f64) -> ScanResult {
    let points = grid
        .par_iter()
        .map(|&dm| ScanPoint { value: dm, populations: pops(&b.env, &params(dm, delta_g, b.scale)), sigma: [0.0; 3], record: None })
        .collect();
    ScanResult { parameter: "delta_m".into(), points }
}

fn symmetric_grid(max_khz: f64, step_khz: f64) -> Vec<f64> {
    let n = (max_khz / step_khz).round() as i64;
    (-n..=n).filter(|&k| k != 0).map(|k| khz(k as f64 * step_khz)).collect()
}

#[test]
fn compensated_scan_is_mirror_symmetric() {
    let b = bench();
    let s = scan(&b, &symmetric_grid(35.0, 0.5), b.stark);
    let worst = max_mirror_difference(&s, khz(35.0)).unwrap();
    assert!(worst < 1e-3, "max |P_k(dm) - P_k(-dm)| = {worst:e}");
}

#[test]
fn residual_light_shift_breaks_symmetry_near_the_sidebands() {
    let b = bench();
    let s = scan(&b, &symmetric_grid(35.0, 0.5), b.stark - khz(0.15));
    let inner = asymmetry_within(&s, khz(8.0)).unwrap();
    let total = asymmetry_metric(&s).unwrap();
    assert!(inner > 0.01, "inner asymmetry {inner}");
    assert!(inner > total, "inner {inner} vs whole scan {total}");
}

#[test]
fn constant_drive_has_p1_minima_at_whole_loops() {
    let b = bench();
    for n in 1..=4 {
        let target = n as f64 / TAU * 1e-3;
        let grid: Vec<f64> = (-20..=20).map(|k| khz(target + 0.05 * k as f64)).collect();
        let s = scan(&b, &grid, b.stark);
        let best = s.points.iter().min_by(|a, c| a.populations.p1.total_cmp(&c.populations.p1)).unwrap();
        assert!(best.populations.p1 < 0.02, "n = {n}: P1 = {}", best.populations.p1);
        assert!((to_khz(best.value) - target).abs() <= 0.3, "n = {n}: minimum at {} kHz", to_khz(best.value));
    }
}

#[test]
fn fock_cutoff_fifteen_is_converged() {
    let b = bench();
    for dm in [khz(6.25), khz(12.5), khz(-12.5), khz(25.0)] {
        let p = params(dm, b.stark, b.scale);
        let a = run(15, &b.env, &p);
        let c = run(20, &b.env, &p);
        let (pa, pc) = (populations(&a).as_array(), populations(&c).as_array());
        let diff = (0..3).map(|k| (pa[k] - pc[k]).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "dm = {} kHz: {diff:e}", to_khz(dm));
    }
}

#[test]
fn spin_phase_does_not_change_populations() {
    let b = bench();
    let mut p = params(khz(12.5), b.stark, b.scale);
    let ref_pops = pops(&b.env, &p).as_array();
    for phi in [0.0, 0.7, 2.1, 4.0] {
        p.spin_phase = phi;
        let q = pops(&b.env, &p).as_array();
        for k in 0..3 {
            assert!((q[k] - ref_pops[k]).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagation_preserves_norm(
        dm in -40.0f64..40.0,
        dg in -5.0f64..5.0,
        o1 in 10.0f64..300.0,
        o2 in 10.0f64..300.0,
        stark in -5.0f64..5.0,
        phi in 0.0f64..6.28,
        n0 in 0usize..4,
    ) {
        prop_assume!(dm.abs() > 0.1);
        let env = EnvelopeSet::constant(60e-6, khz(o1), khz(o2), khz(stark)).unwrap();
        let mut p = params(khz(dm), khz(dg), 1.0);
        p.tau = 60e-6;
        p.spin_phase = phi;
        let (spec, _) = build_space(8).unwrap();
        let out = propagate(&QuantumState::basis(spec, Spin::D, Spin::S, n0), &p, &env, 1e-9).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-6);
        let total: f64 = populations(&out).as_array().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
