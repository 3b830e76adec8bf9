use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sampled drive envelopes on a shared time grid, linearly interpolated.
///
/// `stark` is the light shift at unit power scale; the gate multiplies it by
/// the square of [`GateParams::rabi_scale`](super::GateParams). `doppler` is
/// the Doppler shift relative to the frequency reference the tones were
/// calibrated against, so a perfectly constant-velocity pass has zeros here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSet {
    times: Vec<f64>,
    omega_1: Vec<f64>,
    omega_2: Vec<f64>,
    stark: Vec<f64>,
    doppler: Vec<f64>,
    #[serde(skip)]
    cum_stark: Vec<f64>,
    #[serde(skip)]
    cum_doppler: Vec<f64>,
    #[serde(skip)]
    uniform_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSample {
    pub omega_1: f64,
    pub omega_2: f64,
    pub stark: f64,
    pub doppler: f64,
    /// ∫₀ᵗ Δ_S dt'
    pub int_stark: f64,
    /// ∫₀ᵗ δ_D dt'
    pub int_doppler: f64,
}

fn cumulative(times: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..ys.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (times[i] - times[i - 1]);
        out.push(acc);
    }
    out
}

impl EnvelopeSet {
    pub fn new(times: Vec<f64>, omega_1: Vec<f64>, omega_2: Vec<f64>, stark: Vec<f64>, doppler: Vec<f64>) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::invalid("envelope grid needs at least two points"));
        }
        if [omega_1.len(), omega_2.len(), stark.len(), doppler.len()].iter().any(|&l| l != n) {
            return Err(Error::invalid("envelope arrays must share the time grid"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("envelope grid must start at t = 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("envelope time grid must be strictly increasing"));
        }
        if omega_1.iter().chain(&omega_2).any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("Rabi envelopes must be finite and non-negative"));
        }
        if stark.iter().chain(&doppler).any(|v| !v.is_finite()) {
            return Err(Error::invalid("Stark and Doppler envelopes must be finite"));
        }
        let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
        let uniform = times.iter().enumerate().all(|(i, &t)| (t - i as f64 * dt).abs() <= 1e-9 * dt);
        Ok(EnvelopeSet {
            cum_stark: cumulative(&times, &stark),
            cum_doppler: cumulative(&times, &doppler),
            uniform_step: uniform.then_some(dt),
            times,
            omega_1,
            omega_2,
            stark,
            doppler,
        })
    }

    /// Constant envelopes over `[0, tau]`, as for ions held in a static well.
    pub fn constant(tau: f64, omega_1: f64, omega_2: f64, stark: f64) -> Result<Self> {
        EnvelopeSet::new(vec![0.0, tau], vec![omega_1; 2], vec![omega_2; 2], vec![stark; 2], vec![0.0; 2])
    }

    /// Rebuilds the cached integrals after deserialisation.
    pub fn rebuilt(self) -> Result<Self> {
        EnvelopeSet::new(self.times, self.omega_1, self.omega_2, self.stark, self.doppler)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn omega_1(&self) -> &[f64] {
        &self.omega_1
    }
    pub fn omega_2(&self) -> &[f64] {
        &self.omega_2
    }
    pub fn stark(&self) -> &[f64] {
        &self.stark
    }
    pub fn doppler(&self) -> &[f64] {
        &self.doppler
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn check_covers(&self, tau: f64) -> Result<()> {
        if self.duration() < tau * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "envelopes cover {:.6e} s, gate needs {:.6e} s",
                self.duration(),
                tau
            )));
        }
        Ok(())
    }

    /// Same envelopes with the Stark shift replaced by `stark + offset`.
    pub fn with_stark_offset(&self, offset: f64) -> Result<Self> {
        let stark = self.stark.iter().map(|s| s + offset).collect();
        EnvelopeSet::new(self.times.clone(), self.omega_1.clone(), self.omega_2.clone(), stark, self.doppler.clone())
    }

    /// Same envelopes with a different Doppler column.
    pub fn with_doppler(&self, doppler: Vec<f64>) -> Result<Self> {
        EnvelopeSet::new(self.times.clone(), self.omega_1.clone(), self.omega_2.clone(), self.stark.clone(), doppler)
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        let i = match self.uniform_step {
            Some(dt) => ((t / dt).floor().max(0.0) as usize).min(n - 2),
            None => (self.times.partition_point(|&v| v <= t).max(1) - 1).min(n - 2),
        };
        let h = self.times[i + 1] - self.times[i];
        (i, ((t - self.times[i]) / h).clamp(0.0, 1.0))
    }

    pub fn sample(&self, t: f64) -> EnvSample {
        let (i, w) = self.locate(t);
        let lerp = |v: &[f64]| v[i] + w * (v[i + 1] - v[i]);
        let h = self.times[i + 1] - self.times[i];
        let dt = w * h;
        // exact integral of the linear interpolant over [t_i, t]
        let partial = |v: &[f64]| dt * (v[i] + 0.5 * w * (v[i + 1] - v[i]));
        EnvSample {
            omega_1: lerp(&self.omega_1),
            omega_2: lerp(&self.omega_2),
            stark: lerp(&self.stark),
            doppler: lerp(&self.doppler),
            int_stark: self.cum_stark[i] + partial(&self.stark),
            int_doppler: self.cum_doppler[i] + partial(&self.doppler),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_grids() {
        assert!(EnvelopeSet::new(vec![0.0], vec![1.0], vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(EnvelopeSet::new(vec![0.0, 0.0], vec![1.0; 2], vec![1.0; 2], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(EnvelopeSet::new(vec![0.0, 1.0], vec![-1.0; 2], vec![1.0; 2], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(EnvelopeSet::new(vec![0.0, 1.0], vec![1.0; 2], vec![1.0; 2], vec![f64::NAN; 2], vec![0.0; 2]).is_err());
    }

    #[test]
    fn linear_interpolation_and_integrals() {
        let times = vec![0.0, 1.0, 3.0];
        let ramp = vec![0.0, 2.0, 6.0];
        let env = EnvelopeSet::new(times, ramp.clone(), ramp.clone(), ramp.clone(), vec![1.0; 3]).unwrap();
        let s = env.sample(2.0);
        assert_eq!(s.omega_1, 4.0);
        // ∫₀² of the piecewise-linear ramp 2t is 4
        assert!((s.int_stark - 4.0).abs() < 1e-12);
        assert!((s.int_doppler - 2.0).abs() < 1e-12);
        let end = env.sample(3.0);
        assert!((end.int_stark - 9.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_and_general_lookup_agree() {
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let vals: Vec<f64> = times.iter().map(|t| (3.0 * t).sin().abs()).collect();
        let env = EnvelopeSet::new(times.clone(), vals.clone(), vals.clone(), vals.clone(), vals.clone()).unwrap();
        let mut perturbed = times.clone();
        perturbed[5] += 1e-6;
        let env2 = EnvelopeSet::new(perturbed, vals.clone(), vals.clone(), vals.clone(), vals).unwrap();
        for k in 0..=100 {
            let t = k as f64 * 0.01;
            assert!((env.sample(t).omega_1 - env2.sample(t).omega_1).abs() < 1e-4);
        }
    }
}
