use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{propagate, EnvelopeSet, GateParams};
use crate::qcore::{sample_fock, thermal_tail, HilbertSpec, QuantumState, Spin};
use crate::{Error, Result};

/// Everything needed to run the gate once, apart from the noise draw.
#[derive(Debug, Clone)]
pub struct GateSetup {
    pub spec: HilbertSpec,
    pub params: GateParams,
    pub env: Arc<EnvelopeSet>,
    /// Mean thermal occupation of the mode before the gate.
    pub nbar: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of the per-shot carrier frequency error (rad/s).
    pub sigma_carrier: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        NoiseModel { sigma_carrier: 0.0, seed }
    }
}

fn shot_draw(noise: &NoiseModel, spec: HilbertSpec, nbar: f64, shot: usize) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(shot as u64);
    let eps = if noise.sigma_carrier > 0.0 {
        Normal::new(0.0, noise.sigma_carrier).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng)
    } else {
        0.0
    };
    let n = if nbar > 0.0 { sample_fock(spec, nbar, &mut rng)? } else { 0 };
    Ok((eps, n))
}

fn run_one(setup: &GateSetup, eps: f64, n: usize) -> Result<QuantumState> {
    let mut p = setup.params;
    p.delta_g += eps;
    let start = QuantumState::basis(setup.spec, Spin::S, Spin::S, n);
    propagate(&start, &p, &setup.env, setup.tol)
}

/// Runs `n_shots` independent realisations of the gate.
///
/// Shot `k` draws its carrier offset and initial Fock state from stream `k`
/// of a generator seeded with `noise.seed`, so the ensemble does not depend
/// on scheduling. Failures from all shots are collected before returning.
pub fn run_shots(setup: &GateSetup, noise: &NoiseModel, n_shots: usize) -> Result<Vec<QuantumState>> {
    if n_shots == 0 {
        return Err(Error::invalid("n_shots must be >= 1"));
    }
    if !(noise.sigma_carrier >= 0.0) || !noise.sigma_carrier.is_finite() {
        return Err(Error::invalid("sigma_carrier must be finite and >= 0"));
    }
    if !(setup.nbar >= 0.0) {
        return Err(Error::invalid("nbar must be >= 0"));
    }
    let tail = thermal_tail(setup.nbar, setup.spec.fock_cutoff());
    if tail > 1e-3 {
        return Err(Error::CutoffTooSmall { cutoff: setup.spec.fock_cutoff(), nbar: setup.nbar, tail });
    }
    if noise.sigma_carrier == 0.0 && setup.nbar == 0.0 {
        let st = run_one(setup, 0.0, 0).map_err(|e| Error::ShotsFailed { failures: vec![(0, e.to_string())] })?;
        return Ok(vec![st; n_shots]);
    }
    let results: Vec<Result<QuantumState>> = (0..n_shots)
        .into_par_iter()
        .map(|k| {
            let (eps, n) = shot_draw(noise, setup.spec, setup.nbar, k)?;
            run_one(setup, eps, n)
        })
        .collect();
    let mut failures = Vec::new();
    let mut states = Vec::with_capacity(n_shots);
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => states.push(s),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(states)
    } else {
        Err(Error::ShotsFailed { failures })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::params;
    use super::*;
    use crate::phys::khz;
    use crate::qcore::build_space;

    fn setup() -> GateSetup {
        let (spec, _) = build_space(10).unwrap();
        let dm = khz(12.5);
        let omega = dm / (2.0 * 2f64.sqrt() * 0.042);
        GateSetup {
            spec,
            params: params(dm, 160e-6),
            env: Arc::new(EnvelopeSet::constant(160e-6, omega, omega, 0.0).unwrap()),
            nbar: 0.0,
            tol: 1e-8,
        }
    }

    #[test]
    fn noiseless_shots_equal_single_propagation() {
        let s = setup();
        let shots = run_shots(&s, &NoiseModel::noiseless(1), 4).unwrap();
        let single = run_one(&s, 0.0, 0).unwrap();
        assert!(shots.iter().all(|st| st.max_distance(&single) == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut s = setup();
        s.nbar = 0.05;
        let noise = NoiseModel { sigma_carrier: 700.0, seed: 42 };
        let a = run_shots(&s, &noise, 6).unwrap();
        let b = run_shots(&s, &noise, 6).unwrap();
        assert_eq!(a, b);
        let c = run_shots(&s, &NoiseModel { seed: 43, ..noise }, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shots_are_normalised() {
        let s = setup();
        let noise = NoiseModel { sigma_carrier: 1000.0, seed: 5 };
        for st in run_shots(&s, &noise, 5).unwrap() {
            assert!((st.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_shots_rejected() {
        assert!(run_shots(&setup(), &NoiseModel::noiseless(0), 0).is_err());
    }
}
