//! Simulated readout: trinomial counts, parity scans and Bell fidelity.

use num_complex::Complex64 as C64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{derive_seed, weighted_lstsq};
use crate::qcore::{populations, Populations, QuantumState};
use crate::{Error, Result};

/// Counts by number of bright ions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub shots: u64,
    /// (n0, n1, n2): both dark, one bright, both bright.
    pub counts: [u64; 3],
}

/// 68 % Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.0;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl MeasurementRecord {
    pub fn new(counts: [u64; 3]) -> Self {
        MeasurementRecord { shots: counts.iter().sum(), counts }
    }

    pub fn populations(&self) -> Populations {
        let n = self.shots.max(1) as f64;
        Populations::from_array(self.counts.map(|c| c as f64 / n))
    }

    /// Binomial standard error of each population.
    pub fn sigmas(&self) -> [f64; 3] {
        let n = self.shots.max(1) as f64;
        self.populations().as_array().map(|p| (p * (1.0 - p) / n).sqrt())
    }

    pub fn intervals(&self) -> [(f64, f64); 3] {
        self.counts.map(|k| wilson_interval(k, self.shots))
    }
}

/// Mean populations over an ensemble of states.
pub fn expected_populations(states: &[QuantumState]) -> Populations {
    let mut acc = [0.0; 3];
    for s in states {
        let p = populations(s).as_array();
        for k in 0..3 {
            acc[k] += p[k];
        }
    }
    let n = states.len().max(1) as f64;
    Populations::from_array(acc.map(|a| a / n))
}

/// Draws one ensemble member and one trinomial outcome per shot.
pub fn sample_shots(states: &[QuantumState], shots: u64, seed: u64) -> Result<MeasurementRecord> {
    if states.is_empty() {
        return Err(Error::invalid("cannot sample from an empty ensemble"));
    }
    let pops: Vec<[f64; 3]> = states.iter().map(|s| populations(s).as_array()).collect();
    sample_populations(&pops, shots, seed)
}

/// As [`sample_shots`] with the populations already computed.
pub fn sample_populations(pops: &[[f64; 3]], shots: u64, seed: u64) -> Result<MeasurementRecord> {
    if pops.is_empty() {
        return Err(Error::invalid("cannot sample from an empty ensemble"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 3];
    for _ in 0..shots {
        let member = if pops.len() == 1 { 0 } else { rng.random_range(0..pops.len()) };
        let p = pops[member];
        let u: f64 = rng.random();
        let k = if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        };
        counts[k] += 1;
    }
    Ok(MeasurementRecord::new(counts))
}

/// Ideal global π/2 rotation about the axis at angle `phi` in the xy plane.
pub fn analysis_pulse(state: &QuantumState, phi: f64) -> QuantumState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = C64::new(h, 0.0);
    let to_d = C64::new(0.0, -h) * C64::from_polar(1.0, -phi);
    let to_s = C64::new(0.0, -h) * C64::from_polar(1.0, phi);
    // single-spin matrix in (S, D) order
    let u = [[c, to_s], [to_d, c]];
    let spec = state.spec();
    let m = spec.mode_dim();
    let a = state.amplitudes();
    let mut out = vec![C64::new(0.0, 0.0); a.len()];
    for n in 0..m {
        for s1 in 0..2 {
            for s2 in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for r1 in 0..2 {
                    for r2 in 0..2 {
                        acc += u[s1][r1] * u[s2][r2] * a[(2 * r1 + r2) * m + n];
                    }
                }
                out[(2 * s1 + s2) * m + n] = acc;
            }
        }
    }
    QuantumState::from_amplitudes(spec, out).expect("rotation preserves dimension")
}

/// How populations are read out of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// Ensemble-mean populations without projection noise.
    Exact,
    /// Trinomial sampling with the given number of shots per point.
    Sampled { shots: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityScan {
    pub phases: Vec<f64>,
    pub parity: Vec<f64>,
    pub parity_sigma: Vec<f64>,
    /// Raw counts per phase; empty for exact readout.
    pub records: Vec<MeasurementRecord>,
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    /// φ₀ in Π(φ) = A·cos(2φ + φ₀).
    pub phase_offset: f64,
}

/// Applies the analysis pulse at each phase and fits the parity fringe.
pub fn parity_scan(states: &[QuantumState], phases: &[f64], readout: Readout, seed: u64) -> Result<ParityScan> {
    if states.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    if phases.len() < 3 {
        return Err(Error::EstimationFailure("parity fit needs at least three analysis phases".into()));
    }
    let mut parity = Vec::with_capacity(phases.len());
    let mut sigma = Vec::with_capacity(phases.len());
    let mut records = Vec::new();
    for (k, &phi) in phases.iter().enumerate() {
        let rotated: Vec<QuantumState> = states.iter().map(|s| analysis_pulse(s, phi)).collect();
        match readout {
            Readout::Exact => {
                parity.push(expected_populations(&rotated).parity());
                sigma.push(0.0);
            }
            Readout::Sampled { shots } => {
                if shots == 0 {
                    return Err(Error::invalid("shots must be >= 1"));
                }
                let rec = sample_shots(&rotated, shots, derive_seed(seed, "parity", k as u64))?;
                let pi = rec.populations().parity();
                // variance floor keeps the weights finite when |Π| = 1
                let var = (1.0 - pi * pi).max(1.0 / shots as f64) / shots as f64;
                parity.push(pi);
                sigma.push(var.sqrt());
                records.push(rec);
            }
        }
    }
    let design: Vec<Vec<f64>> = phases.iter().map(|p| vec![(2.0 * p).cos(), (2.0 * p).sin()]).collect();
    let weights: Vec<f64> = sigma.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 }).collect();
    let (coef, cov) = weighted_lstsq(&design, &parity, &weights)
        .ok_or_else(|| Error::EstimationFailure("parity fit design is singular".into()))?;
    let (a, b) = (coef[0], -coef[1]);
    let amp = a.hypot(b);
    let amp_sigma = match readout {
        Readout::Exact => 0.0,
        Readout::Sampled { .. } => {
            if amp > 0.0 {
                ((a * a * cov[0][0] + b * b * cov[1][1] - 2.0 * a * b * cov[0][1]) / (amp * amp)).max(0.0).sqrt()
            } else {
                (0.5 * (cov[0][0] + cov[1][1])).sqrt()
            }
        }
    };
    Ok(ParityScan {
        phases: phases.to_vec(),
        parity,
        parity_sigma: sigma,
        records,
        amplitude: amp.clamp(0.0, 1.0),
        amplitude_sigma: amp_sigma,
        phase_offset: b.atan2(a),
    })
}

/// `n` analysis phases evenly covering [0, π).
pub fn default_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| std::f64::consts::PI * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub p0: f64,
    pub p0_sigma: f64,
    pub p2: f64,
    pub p2_sigma: f64,
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub fidelity: f64,
    pub fidelity_sigma: f64,
}

/// F = (P0 + P2 + A)/2 with first-order error propagation.
pub fn bell_fidelity(record: &MeasurementRecord, amplitude: f64, amplitude_sigma: f64) -> Result<FidelityEstimate> {
    if !(0.0..=1.0).contains(&amplitude) || !(amplitude_sigma >= 0.0) {
        return Err(Error::invalid(format!("parity amplitude must lie in [0, 1], got {amplitude}")));
    }
    if record.shots == 0 {
        return Err(Error::invalid("record has no shots"));
    }
    let p = record.populations();
    let s = record.sigmas();
    let n = record.shots as f64;
    // P0 + P2 is binomial; the +1/2 smoothing keeps the error non-zero at the edges
    let q = (record.counts[0] + record.counts[2]) as f64;
    let qs = (q + 0.5) / (n + 1.0);
    let var_sum = qs * (1.0 - qs) / n;
    Ok(FidelityEstimate {
        p0: p.p0,
        p0_sigma: s[0],
        p2: p.p2,
        p2_sigma: s[2],
        amplitude,
        amplitude_sigma,
        fidelity: (0.5 * (p.p0 + p.p2 + amplitude)).clamp(0.0, 1.0),
        fidelity_sigma: 0.5 * (var_sum + amplitude_sigma * amplitude_sigma).sqrt(),
    })
}

/// Noise-free counterpart of [`bell_fidelity`] from exact populations.
pub fn exact_bell_fidelity(pops: &Populations, amplitude: f64) -> FidelityEstimate {
    FidelityEstimate {
        p0: pops.p0,
        p0_sigma: 0.0,
        p2: pops.p2,
        p2_sigma: 0.0,
        amplitude,
        amplitude_sigma: 0.0,
        fidelity: (0.5 * (pops.p0 + pops.p2 + amplitude)).clamp(0.0, 1.0),
        fidelity_sigma: 0.0,
    }
}

/// One point of a parameter scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub value: f64,
    pub populations: Populations,
    pub sigma: [f64; 3],
    /// Present for sampled readout; partitions the shots.
    pub record: Option<MeasurementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Name of the scanned parameter.
    pub parameter: String,
    pub points: Vec<ScanPoint>,
}

impl ScanResult {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Scan value with the smallest P1.
    pub fn argmin_p1(&self) -> Option<f64> {
        self.points
            .iter()
            .min_by(|a, b| a.populations.p1.total_cmp(&b.populations.p1))
            .map(|p| p.value)
    }
}

/// Pairs of points at ±v (v ≠ 0) with `|v| <= max_abs`.
fn mirrored_pairs(scan: &ScanResult, max_abs: f64) -> Result<Vec<(usize, usize)>> {
    let vals = scan.values();
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    let mut pairs = Vec::new();
    for (i, &v) in vals.iter().enumerate() {
        if v.abs() <= tol {
            continue;
        }
        let j = vals
            .iter()
            .position(|&w| (w + v).abs() <= tol)
            .ok_or_else(|| Error::invalid(format!("scan grid is not symmetric: no partner for {v}")))?;
        if v > 0.0 && v <= max_abs + tol {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// Mean over |δm| of Σ_k |P_k(δm) − P_k(−δm)| / 3.
pub fn asymmetry_metric(scan: &ScanResult) -> Result<f64> {
    asymmetry_within(scan, f64::INFINITY)
}

/// [`asymmetry_metric`] restricted to `|value| <= max_abs`.
pub fn asymmetry_within(scan: &ScanResult, max_abs: f64) -> Result<f64> {
    let pairs = mirrored_pairs(scan, max_abs)?;
    if pairs.is_empty() {
        return Err(Error::invalid("scan has no mirrored pairs"));
    }
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let a = scan.points[i].populations.as_array();
            let b = scan.points[j].populations.as_array();
            (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>() / 3.0
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Largest single-population difference between mirrored points.
pub fn max_mirror_difference(scan: &ScanResult, max_abs: f64) -> Result<f64> {
    let pairs = mirrored_pairs(scan, max_abs)?;
    Ok(pairs
        .iter()
        .map(|&(i, j)| {
            let a = scan.points[i].populations.as_array();
            let b = scan.points[j].populations.as_array();
            (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{build_space, Spin};

    fn bell() -> QuantumState {
        let (spec, _) = build_space(3).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        QuantumState::superposition(spec, &[(C64::new(h, 0.0), Spin::S, Spin::S, 0), (C64::new(0.0, -h), Spin::D, Spin::D, 0)])
            .unwrap()
    }

    fn mixture() -> Vec<QuantumState> {
        let (spec, _) = build_space(3).unwrap();
        vec![QuantumState::basis(spec, Spin::S, Spin::S, 0), QuantumState::basis(spec, Spin::D, Spin::D, 0)]
    }

    #[test]
    fn all_bright_state_counts() {
        let (spec, _) = build_space(3).unwrap();
        let r = sample_shots(&[QuantumState::basis(spec, Spin::S, Spin::S, 0)], 100, 1).unwrap();
        assert_eq!(r.counts, [0, 0, 100]);
    }

    #[test]
    fn bell_state_counts() {
        let r = sample_shots(&[bell()], 100_000, 3).unwrap();
        assert_eq!(r.counts[1], 0);
        assert!((r.populations().p0 - 0.5).abs() < 0.005);
        assert_eq!(r, sample_shots(&[bell()], 100_000, 3).unwrap());
    }

    #[test]
    fn wilson_interval_brackets_estimate() {
        let (lo, hi) = wilson_interval(30, 100);
        assert!(lo < 0.3 && hi > 0.3);
        assert_eq!(wilson_interval(0, 100).0, 0.0);
    }

    #[test]
    fn bell_state_has_unit_parity_amplitude() {
        let scan = parity_scan(&[bell()], &default_phases(12), Readout::Exact, 0).unwrap();
        assert!((scan.amplitude - 1.0).abs() < 1e-12);
        // fringe oscillates at twice the analysis phase
        assert!((scan.parity[0] + scan.parity[6]).abs() < 1e-12);
        assert!((scan.parity[3] + scan.parity[9]).abs() < 1e-12);
    }

    #[test]
    fn dephased_mixture_has_no_fringe() {
        let s = parity_scan(&mixture(), &default_phases(12), Readout::Sampled { shots: 2000 }, 5).unwrap();
        assert!(s.amplitude < 3.0 * s.amplitude_sigma + 0.01, "{} {}", s.amplitude, s.amplitude_sigma);
        let e = parity_scan(&mixture(), &default_phases(12), Readout::Exact, 0).unwrap();
        assert!(e.amplitude < 1e-12);
    }

    #[test]
    fn too_few_phases_is_estimation_failure() {
        assert!(matches!(parity_scan(&[bell()], &[0.0, 1.0], Readout::Exact, 0), Err(Error::EstimationFailure(_))));
    }

    #[test]
    fn fidelity_formula() {
        let rec = MeasurementRecord::new([500, 0, 500]);
        assert!((bell_fidelity(&rec, 1.0, 0.0).unwrap().fidelity - 1.0).abs() < 1e-12);
        assert!((bell_fidelity(&rec, 0.94, 0.01).unwrap().fidelity - 0.97).abs() < 1e-12);
        let rec = MeasurementRecord::new([500, 100, 400]);
        let f = bell_fidelity(&rec, 0.9, 0.0).unwrap();
        assert!((f.fidelity - 0.9).abs() < 1e-12);
        assert!(f.fidelity_sigma > 0.0);
    }

    #[test]
    fn asymmetry_needs_symmetric_grid() {
        let pt = |v: f64, p: [f64; 3]| ScanPoint { value: v, populations: Populations::from_array(p), sigma: [0.0; 3], record: None };
        let sym = ScanResult {
            parameter: "delta_m".into(),
            points: vec![pt(-1.0, [0.2, 0.3, 0.5]), pt(0.0, [0.0, 1.0, 0.0]), pt(1.0, [0.2, 0.3, 0.5])],
        };
        assert_eq!(asymmetry_metric(&sym).unwrap(), 0.0);
        let skew = ScanResult { points: vec![pt(-1.0, [0.2, 0.3, 0.5]), pt(1.0, [0.5, 0.3, 0.2])], ..sym.clone() };
        assert!((asymmetry_metric(&skew).unwrap() - 0.2).abs() < 1e-12);
        let bad = ScanResult { points: vec![pt(-1.0, [0.2, 0.3, 0.5]), pt(2.0, [0.2, 0.3, 0.5])], ..sym };
        assert!(matches!(asymmetry_metric(&bad), Err(Error::InvalidArgument(_))));
    }
}
