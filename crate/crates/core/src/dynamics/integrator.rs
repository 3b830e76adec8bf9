//! Adaptive Dormand–Prince 5(4) stepper for complex state vectors.

use num_complex::Complex64 as C64;

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest allowed step as a fraction of the integration span.
    pub min_step_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Integrates the linear system `dy/dt = f(t, y)` from `t0` to `t1` in place.
///
/// `after_step` may rescale every accepted state and returns the factor it
/// applied; linearity lets the last stage be reused after the rescale.
pub fn dopri5<F, P>(mut f: F, mut after_step: P, t0: f64, t1: f64, y: &mut [C64], ctl: StepControl) -> Result<Stats>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    P: FnMut(&mut [C64]) -> f64,
{
    let n = y.len();
    let span = t1 - t0;
    let mut stats = Stats::default();
    if span == 0.0 {
        return Ok(stats);
    }
    let min_step = ctl.min_step_fraction * span.abs();
    let mut k: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut ynew = vec![C64::new(0.0, 0.0); n];

    let mut t = t0;
    f(t, y, &mut k[0]);
    stats.evaluations += 1;

    // initial step from the derivative scale
    let d0 = y.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    let d1 = k[0].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut h = if d1 > 0.0 { 0.01 * d0 / d1 } else { span.abs() };
    h = h.min(span.abs()).max(min_step);

    while t < t1 {
        if stats.accepted + stats.rejected >= ctl.max_steps {
            return Err(Error::IntegrationFailure {
                t,
                step: h,
                reason: format!("exceeded {} steps", ctl.max_steps),
            });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }

        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $i:expr)),*]) => {{
                for j in 0..n {
                    tmp[j] = y[j] + h * (C64::new(0.0, 0.0) $(+ $a * k[$i][j])*);
                }
                f(t + $c * h, &tmp, &mut k[$dst]);
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for j in 0..n {
            ynew[j] = y[j] + h * (A71 * k[0][j] + A73 * k[2][j] + A74 * k[3][j] + A75 * k[4][j] + A76 * k[5][j]);
        }
        f(t + h, &ynew, &mut k[6]);
        stats.evaluations += 6;

        let mut err: f64 = 0.0;
        for j in 0..n {
            let e = h * (E1 * k[0][j] + E3 * k[2][j] + E4 * k[3][j] + E5 * k[4][j] + E6 * k[5][j] + E7 * k[6][j]);
            let scale = ctl.atol + ctl.rtol * y[j].norm().max(ynew[j].norm());
            err = err.max(e.norm() / scale);
        }
        if !err.is_finite() {
            return Err(Error::IntegrationFailure { t, step: h, reason: "non-finite error estimate".into() });
        }

        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&ynew);
            let scale = after_step(y);
            let (first, rest) = k.split_at_mut(1);
            for (a, b) in first[0].iter_mut().zip(&rest[5]) {
                *a = b * scale;
            }
            stats.accepted += 1;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < min_step {
                return Err(Error::IntegrationFailure {
                    t,
                    step: h,
                    reason: format!("step size underflow (error ratio {err:.3e})"),
                });
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctl(tol: f64) -> StepControl {
        StepControl { rtol: tol, atol: tol, max_steps: 1_000_000, min_step_fraction: 1e-14 }
    }

    #[test]
    fn harmonic_phase() {
        // y' = -i w y  =>  y(t) = exp(-i w t)
        let w = 3.7;
        let mut y = vec![C64::new(1.0, 0.0)];
        dopri5(|_, y, dy| dy[0] = C64::new(0.0, -w) * y[0], |_| 1.0, 0.0, 2.0, &mut y, ctl(1e-12)).unwrap();
        let exact = C64::from_polar(1.0, -w * 2.0);
        assert!((y[0] - exact).norm() < 1e-10);
    }

    #[test]
    fn time_dependent_rate() {
        // y' = i t y  =>  y = exp(i t²/2)
        let mut y = vec![C64::new(1.0, 0.0)];
        dopri5(|t, y, dy| dy[0] = C64::new(0.0, t) * y[0], |_| 1.0, 0.0, 3.0, &mut y, ctl(1e-12)).unwrap();
        assert!((y[0] - C64::from_polar(1.0, 4.5)).norm() < 1e-10);
    }

    #[test]
    fn step_limit_reports_failure() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let c = StepControl { max_steps: 3, ..ctl(1e-12) };
        let r = dopri5(|_, y, dy| dy[0] = C64::new(0.0, -100.0) * y[0], |_| 1.0, 0.0, 10.0, &mut y, c);
        assert!(matches!(r, Err(Error::IntegrationFailure { .. })));
    }
}
