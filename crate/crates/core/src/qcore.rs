//! Hilbert space of two spin-1/2 ions coupled to one truncated motional mode.
//!
//! Basis ordering is `|s1 s2 n⟩` with `s ∈ {S, D}` (S = 0, D = 1) and the
//! phonon number `n` varying fastest:
//!
//! ```text
//! index(s1, s2, n) = (2·s1 + s2)·(n_max + 1) + n
//! ```
//!
//! [`HilbertSpec::index`] and [`HilbertSpec::decompose`] are the only places
//! that encode this mapping. S is the fluorescing ("bright") ground state and
//! σ⁺ = |D⟩⟨S|.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type C64 = Complex64;
pub type Operator = DMatrix<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tail probability above which a thermal state no longer fits the cutoff.
pub const THERMAL_TAIL_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    S = 0,
    D = 1,
}

impl Spin {
    pub fn from_bit(b: usize) -> Spin {
        if b == 0 {
            Spin::S
        } else {
            Spin::D
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpec {
    fock_cutoff: usize,
}

impl HilbertSpec {
    pub fn new(fock_cutoff: usize) -> Result<Self> {
        if fock_cutoff < 2 {
            return Err(Error::invalid(format!("fock cutoff must be >= 2, got {fock_cutoff}")));
        }
        Ok(HilbertSpec { fock_cutoff })
    }

    /// Largest phonon number kept.
    pub fn fock_cutoff(&self) -> usize {
        self.fock_cutoff
    }

    pub fn mode_dim(&self) -> usize {
        self.fock_cutoff + 1
    }

    pub fn dim(&self) -> usize {
        4 * self.mode_dim()
    }

    pub fn index(&self, s1: Spin, s2: Spin, n: usize) -> usize {
        debug_assert!(n <= self.fock_cutoff);
        (2 * s1 as usize + s2 as usize) * self.mode_dim() + n
    }

    pub fn decompose(&self, index: usize) -> (Spin, Spin, usize) {
        let block = index / self.mode_dim();
        (Spin::from_bit(block >> 1), Spin::from_bit(block & 1), index % self.mode_dim())
    }

    /// Number of ions in D for a basis index.
    pub fn dark_count(&self, index: usize) -> usize {
        let (s1, s2, _) = self.decompose(index);
        s1 as usize + s2 as usize
    }
}

/// Dense operators on the full space.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub a: Operator,
    pub a_dagger: Operator,
    pub sigma_plus_1: Operator,
    pub sigma_plus_2: Operator,
    pub sigma_minus_1: Operator,
    pub sigma_minus_2: Operator,
    pub identity: Operator,
}

fn kron(a: &Operator, b: &Operator) -> Operator {
    a.kronecker(b)
}

pub fn build_space(fock_cutoff: usize) -> Result<(HilbertSpec, OperatorSet)> {
    let spec = HilbertSpec::new(fock_cutoff)?;
    let m = spec.mode_dim();
    let mut a_mode = Operator::zeros(m, m);
    for n in 1..m {
        a_mode[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let id2 = Operator::identity(2, 2);
    let idm = Operator::identity(m, m);
    let mut sp = Operator::zeros(2, 2);
    sp[(Spin::D as usize, Spin::S as usize)] = ONE;
    let sm = sp.adjoint();

    let a = kron(&kron(&id2, &id2), &a_mode);
    let ops = OperatorSet {
        a_dagger: a.adjoint(),
        a,
        sigma_plus_1: kron(&kron(&sp, &id2), &idm),
        sigma_plus_2: kron(&kron(&id2, &sp), &idm),
        sigma_minus_1: kron(&kron(&sm, &id2), &idm),
        sigma_minus_2: kron(&kron(&id2, &sm), &idm),
        identity: Operator::identity(spec.dim(), spec.dim()),
    };
    Ok((spec, ops))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    spec: HilbertSpec,
    amplitudes: Vec<C64>,
}

impl QuantumState {
    pub fn from_amplitudes(spec: HilbertSpec, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != spec.dim() {
            return Err(Error::invalid(format!(
                "state has {} amplitudes, space dimension is {}",
                amplitudes.len(),
                spec.dim()
            )));
        }
        Ok(QuantumState { spec, amplitudes })
    }

    pub fn basis(spec: HilbertSpec, s1: Spin, s2: Spin, n: usize) -> Self {
        let mut amplitudes = vec![ZERO; spec.dim()];
        amplitudes[spec.index(s1, s2, n)] = ONE;
        QuantumState { spec, amplitudes }
    }

    /// Normalised superposition of basis states.
    pub fn superposition(spec: HilbertSpec, terms: &[(C64, Spin, Spin, usize)]) -> Result<Self> {
        let mut amplitudes = vec![ZERO; spec.dim()];
        for &(c, s1, s2, n) in terms {
            if n > spec.fock_cutoff() {
                return Err(Error::invalid(format!("phonon number {n} above cutoff")));
            }
            amplitudes[spec.index(s1, s2, n)] += c;
        }
        let mut st = QuantumState { spec, amplitudes };
        st.normalize()?;
        Ok(st)
    }

    pub fn spec(&self) -> HilbertSpec {
        self.spec
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("cannot normalise a zero or non-finite state"));
        }
        self.amplitudes.iter_mut().for_each(|c| *c /= n);
        Ok(())
    }

    /// Largest absolute amplitude difference.
    pub fn max_distance(&self, other: &QuantumState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Probability that a thermal distribution with mean `nbar` exceeds `cutoff`.
pub fn thermal_tail(nbar: f64, cutoff: usize) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (nbar / (nbar + 1.0)).powi(cutoff as i32 + 1)
}

/// Samples a Fock number from the thermal (geometric) distribution with mean
/// `nbar`, truncated to the cutoff by rejection.
pub fn sample_fock<R: Rng + ?Sized>(spec: HilbertSpec, nbar: f64, rng: &mut R) -> Result<usize> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::invalid(format!("nbar must be finite and >= 0, got {nbar}")));
    }
    let tail = thermal_tail(nbar, spec.fock_cutoff());
    if tail > THERMAL_TAIL_LIMIT {
        return Err(Error::CutoffTooSmall { cutoff: spec.fock_cutoff(), nbar, tail });
    }
    if nbar == 0.0 {
        return Ok(0);
    }
    let geo = Geometric::new(1.0 / (nbar + 1.0)).map_err(|e| Error::invalid(e.to_string()))?;
    loop {
        let n = geo.sample(rng) as usize;
        if n <= spec.fock_cutoff() {
            return Ok(n);
        }
    }
}

/// `|S S n⟩` with `n` drawn from a thermal distribution of mean `nbar`.
pub fn initial_state(spec: HilbertSpec, nbar: f64, seed: u64) -> Result<QuantumState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sample_fock(spec, nbar, &mut rng)?;
    Ok(QuantumState::basis(spec, Spin::S, Spin::S, n))
}

/// Populations by number of bright (S) ions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    /// Both ions dark, |DD⟩.
    pub p0: f64,
    /// One ion bright, |SD⟩ and |DS⟩.
    pub p1: f64,
    /// Both ions bright, |SS⟩.
    pub p2: f64,
}

impl Populations {
    pub fn as_array(&self) -> [f64; 3] {
        [self.p0, self.p1, self.p2]
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Populations { p0: p[0], p1: p[1], p2: p[2] }
    }

    /// Parity P0 + P2 − P1.
    pub fn parity(&self) -> f64 {
        self.p0 + self.p2 - self.p1
    }
}

pub fn populations(state: &QuantumState) -> Populations {
    let spec = state.spec();
    let mut p = [0.0; 3];
    for (i, c) in state.amplitudes().iter().enumerate() {
        p[2 - spec.dark_count(i)] += c.norm_sqr();
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    Populations::from_array(p)
}

/// A normalised two-spin state in the |SS⟩, |SD⟩, |DS⟩, |DD⟩ basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState(pub [C64; 4]);

impl SpinState {
    /// (|SS⟩ − i|DD⟩)/√2, the state the gate is calibrated to produce.
    pub fn bell_target() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        SpinState([C64::new(h, 0.0), ZERO, ZERO, C64::new(0.0, -h)])
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::invalid("zero spin state"));
        }
        self.0.iter_mut().for_each(|c| *c /= n);
        Ok(self)
    }
}

/// ⟨target| Tr_mode(|ψ⟩⟨ψ|) |target⟩.
pub fn overlap_fidelity(state: &QuantumState, target: &SpinState) -> f64 {
    let spec = state.spec();
    let m = spec.mode_dim();
    let amps = state.amplitudes();
    let mut f = 0.0;
    for n in 0..m {
        let mut proj = ZERO;
        for (block, t) in target.0.iter().enumerate() {
            proj += t.conj() * amps[block * m + n];
        }
        f += proj.norm_sqr();
    }
    f.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs(m: &Operator) -> f64 {
        m.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn smallest_cutoff() {
        let (spec, ops) = build_space(2).unwrap();
        assert_eq!(spec.dim(), 12);
        let m = spec.mode_dim();
        for block in 0..4 {
            let nz = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|&(i, j)| ops.a[(block * m + i, block * m + j)].norm() > 0.0)
                .count();
            assert_eq!(nz, 2);
        }
    }

    #[test]
    fn rejects_cutoff_below_two() {
        assert!(matches!(build_space(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn commutator_is_identity_below_top_row() {
        let (spec, ops) = build_space(15).unwrap();
        let comm = &ops.a * &ops.a_dagger - &ops.a_dagger * &ops.a;
        for i in 0..spec.dim() {
            for j in 0..spec.dim() {
                let (_, _, n) = spec.decompose(i);
                let expect = if i == j && n < spec.fock_cutoff() { ONE } else { ZERO };
                if n == spec.fock_cutoff() && i == j {
                    continue;
                }
                assert_abs_diff_eq!(comm[(i, j)].re, expect.re, epsilon = 1e-12);
                assert_abs_diff_eq!(comm[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matches_hand_built_kronecker_products() {
        let (spec, ops) = build_space(6).unwrap();
        let m = 7;
        // element-by-element construction from the 2x2 and 7x7 factors
        let spin_plus = |out: usize, inp: usize| if out == 1 && inp == 0 { 1.0 } else { 0.0 };
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let lower = |out: usize, inp: usize| if inp == out + 1 { (inp as f64).sqrt() } else { 0.0 };
        for r1 in 0..2 {
            for r2 in 0..2 {
                for rn in 0..m {
                    for c1 in 0..2 {
                        for c2 in 0..2 {
                            for cn in 0..m {
                                let row = (2 * r1 + r2) * m + rn;
                                let col = (2 * c1 + c2) * m + cn;
                                let a = delta(r1, c1) * delta(r2, c2) * lower(rn, cn);
                                let sp1 = spin_plus(r1, c1) * delta(r2, c2) * delta(rn, cn);
                                let sp2 = delta(r1, c1) * spin_plus(r2, c2) * delta(rn, cn);
                                let sm1 = spin_plus(c1, r1) * delta(r2, c2) * delta(rn, cn);
                                assert_eq!(ops.a[(row, col)], C64::new(a, 0.0));
                                assert_eq!(ops.a_dagger[(col, row)], C64::new(a, 0.0));
                                assert_eq!(ops.sigma_plus_1[(row, col)], C64::new(sp1, 0.0));
                                assert_eq!(ops.sigma_plus_2[(row, col)], C64::new(sp2, 0.0));
                                assert_eq!(ops.sigma_minus_1[(row, col)], C64::new(sm1, 0.0));
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(spec.dim(), 28);
    }

    #[test]
    fn spin_algebra() {
        let (_, ops) = build_space(4).unwrap();
        assert_eq!(max_abs(&(&ops.sigma_plus_1 * &ops.sigma_plus_1)), 0.0);
        assert_eq!(max_abs(&(&ops.sigma_plus_2 * &ops.sigma_plus_2)), 0.0);
        let anti = &ops.sigma_plus_1 * &ops.sigma_minus_1 + &ops.sigma_minus_1 * &ops.sigma_plus_1;
        assert!(max_abs(&(anti - &ops.identity)) < 1e-15);
        let anti2 = &ops.sigma_plus_2 * &ops.sigma_minus_2 + &ops.sigma_minus_2 * &ops.sigma_plus_2;
        assert!(max_abs(&(anti2 - &ops.identity)) < 1e-15);
        let comm = &ops.sigma_plus_1 * &ops.sigma_minus_2 - &ops.sigma_minus_2 * &ops.sigma_plus_1;
        assert_eq!(max_abs(&comm), 0.0);
        assert_eq!(ops.a_dagger, ops.a.adjoint());
    }

    #[test]
    fn index_mapping_is_a_bijection() {
        let spec = HilbertSpec::new(5).unwrap();
        for i in 0..spec.dim() {
            let (s1, s2, n) = spec.decompose(i);
            assert_eq!(spec.index(s1, s2, n), i);
        }
    }

    #[test]
    fn ground_state_initial() {
        let spec = HilbertSpec::new(15).unwrap();
        let st = initial_state(spec, 0.0, 7).unwrap();
        assert_eq!(st, QuantumState::basis(spec, Spin::S, Spin::S, 0));
        assert_abs_diff_eq!(st.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn thermal_sampling_mean() {
        // Geometric distribution with mean nbar: variance nbar(nbar + 1).
        let spec = HilbertSpec::new(15).unwrap();
        let nbar = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mean = (0..draws).map(|_| sample_fock(spec, nbar, &mut rng).unwrap() as f64).sum::<f64>() / draws as f64;
        let sigma = (nbar * (nbar + 1.0) / draws as f64).sqrt();
        assert!((mean - nbar).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn thermal_guard() {
        let spec = HilbertSpec::new(6).unwrap();
        assert!(matches!(initial_state(spec, 5.0, 1), Err(Error::CutoffTooSmall { .. })));
    }

    #[test]
    fn population_examples() {
        let spec = HilbertSpec::new(6).unwrap();
        let ss = QuantumState::basis(spec, Spin::S, Spin::S, 0);
        assert_eq!(populations(&ss).as_array(), [0.0, 0.0, 1.0]);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = QuantumState::superposition(
            spec,
            &[(C64::new(h, 0.0), Spin::S, Spin::S, 0), (C64::new(0.0, -h), Spin::D, Spin::D, 0)],
        )
        .unwrap();
        let p = populations(&bell);
        assert_abs_diff_eq!(p.p0, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.p1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.p2, 0.5, epsilon = 1e-15);

        let one = QuantumState::superposition(spec, &[(ONE, Spin::S, Spin::D, 3), (ONE, Spin::D, Spin::S, 5)]).unwrap();
        let p = populations(&one);
        assert_abs_diff_eq!(p.p1, 1.0, epsilon = 1e-15);

        assert_abs_diff_eq!(overlap_fidelity(&bell, &SpinState::bell_target()), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(overlap_fidelity(&ss, &SpinState::bell_target()), 0.5, epsilon = 1e-14);
    }

    proptest::proptest! {
        #[test]
        fn populations_sum_to_one(re in proptest::collection::vec(-1.0f64..1.0, 28), im in proptest::collection::vec(-1.0f64..1.0, 28)) {
            let spec = HilbertSpec::new(6).unwrap();
            let amps: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
            let mut st = QuantumState::from_amplitudes(spec, amps).unwrap();
            proptest::prop_assume!(st.norm() > 1e-3);
            st.normalize().unwrap();
            let p = populations(&st);
            proptest::prop_assert!((p.p0 + p.p1 + p.p2 - 1.0).abs() < 1e-9);
            for v in p.as_array() {
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }
            let f = overlap_fidelity(&st, &SpinState::bell_target());
            proptest::prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
