use num_complex::Complex64 as C64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgate::dynamics::oracle::piecewise_exponential;
use tgate::dynamics::{analytic_ms_reference, propagate, EnvelopeSet, GateParams};
use tgate::phys::{khz, mhz};
use tgate::qcore::{build_space, overlap_fidelity, QuantumState, SpinState};

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / n).collect()
}

#[test]
fn propagator_matches_piecewise_exponential() {
    let (spec, ops) = build_space(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tau = 50e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let env = EnvelopeSet::constant(
            tau,
            khz(rng.random_range(20.0..200.0)),
            khz(rng.random_range(20.0..200.0)),
            khz(rng.random_range(-5.0..5.0)),
        )
        .unwrap();
        let params = GateParams {
            tau,
            delta_m: khz(rng.random_range(-30.0..30.0)),
            delta_g: khz(rng.random_range(-5.0..5.0)),
            omega_bm: mhz(2.45),
            eta_bm: 0.042,
            spin_phase: rng.random_range(0.0..6.28),
            rabi_scale: rng.random_range(0.5..1.5),
        };
        let start = QuantumState::from_amplitudes(spec, random_state(&mut rng, spec.dim())).unwrap();
        let fast = propagate(&start, &params, &env, 1e-10).unwrap();
        let brute = piecewise_exponential(&ops, &start, &params, &env, 1e-9).unwrap();
        worst = worst.max(fast.max_distance(&brute));
    }
    assert!(worst < 1e-8, "max state error {worst:e}");
}

#[test]
fn analytic_condition_gives_bell_state() {
    let (spec, _) = build_space(15).unwrap();
    let params = GateParams {
        tau: 160e-6,
        delta_m: khz(12.5),
        delta_g: 0.0,
        omega_bm: mhz(2.45),
        eta_bm: 0.042,
        spin_phase: std::f64::consts::FRAC_PI_2,
        rabi_scale: 1.0,
    };
    let r = analytic_ms_reference(&params, 1.0).unwrap();
    let env = EnvelopeSet::constant(params.tau, r.ideal_rabi, r.ideal_rabi, 0.0).unwrap();
    let out = propagate(&QuantumState::basis(spec, tgate::qcore::Spin::S, tgate::qcore::Spin::S, 0), &params, &env, 1e-9)
        .unwrap();
    assert!(overlap_fidelity(&out, &SpinState::bell_target()) > 0.9999);
}
