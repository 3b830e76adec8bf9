//! Small numerical helpers shared across modules.

use crate::{Error, Result};

/// Brent's method on a bracketing interval. Stops once the bracket is
/// narrower than `xtol` or the function value is exactly zero.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSolution(format!(
            "root not bracketed: f({a:.4e}) = {fa:.4e}, f({b:.4e}) = {fb:.4e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NoSolution(format!("brent did not converge in {max_iter} iterations")))
}

/// Linear interpolation of samples `ys` on the strictly increasing grid `xs`.
/// Values outside the grid are clamped to the end samples.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}

/// Vertex of the parabola through three equally spaced points centred on `x1`.
/// Falls back to `x1` when the points are collinear or concave.
pub fn parabolic_vertex(x1: f64, h: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let denom = y0 - 2.0 * y1 + y2;
    if denom <= 0.0 {
        return x1;
    }
    let shift = 0.5 * h * (y0 - y2) / denom;
    x1 + shift.clamp(-h, h)
}

/// Weighted linear least squares for the columns of `design` (row-major, `n × p`).
/// Returns coefficients and their covariance.
pub fn weighted_lstsq(design: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = design.first()?.len();
    let mut ata = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut aty = nalgebra::DVector::<f64>::zeros(p);
    for ((row, &yi), &wi) in design.iter().zip(y).zip(w) {
        for i in 0..p {
            aty[i] += wi * row[i] * yi;
            for j in 0..p {
                ata[(i, j)] += wi * row[i] * row[j];
            }
        }
    }
    let inv = ata.try_inverse()?;
    let coef = &inv * aty;
    let cov = (0..p).map(|i| (0..p).map(|j| inv[(i, j)]).collect()).collect();
    Some((coef.iter().copied().collect(), cov))
}

/// Evenly spaced grid from `start` to `stop` inclusive with spacing close to `step`.
pub fn linspace_step(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || !(stop >= start) {
        return Vec::new();
    }
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|k| start + (stop - start) * k as f64 / n.max(1) as f64).collect()
}

/// Child seed for a labelled sub-experiment, stable across platforms.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then two rounds of splitmix64
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(seed ^ h) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_label_and_index() {
        let a = derive_seed(7, "scan", 0);
        assert_eq!(a, derive_seed(7, "scan", 0));
        assert_ne!(a, derive_seed(7, "scan", 1));
        assert_ne!(a, derive_seed(7, "scam", 0));
        assert_ne!(a, derive_seed(8, "scan", 0));
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0), 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        assert!(matches!(brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-9, 50), Err(Error::NoSolution(_))));
    }

    #[test]
    fn interp_clamps_and_interpolates() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [0.0, 2.0, 6.0];
        assert_eq!(interp(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp(&xs, &ys, 2.0), 4.0);
        assert_eq!(interp(&xs, &ys, 9.0), 6.0);
    }

    #[test]
    fn vertex_of_exact_parabola() {
        let f = |x: f64| (x - 0.3) * (x - 0.3);
        let v = parabolic_vertex(0.0, 0.5, f(-0.5), f(0.0), f(0.5));
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn lstsq_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.0 - 0.5 * x).collect();
        let (c, _) = weighted_lstsq(&design, &y, &vec![1.0; 10]).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn linspace_includes_ends() {
        let g = linspace_step(-1.0, 1.0, 0.5);
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(linspace_step(1.0, 0.0, 0.1).is_empty());
    }
}
