use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::VOLTAGE_LIMIT;
use crate::numeric::interp;
use crate::{Error, Result};

/// DAC sample period (s).
pub const SAMPLE_PERIOD: f64 = 5e-9;

const MIN_SEGMENT_SAMPLES: usize = 10;
const FORMAT_TAG: &str = "tgate-waveform v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Well position the voltages were solved for (m).
    pub x: f64,
    pub volts: Vec<f64>,
}

/// A run of keyframe intervals played back at one velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub first_keyframe: usize,
    pub last_keyframe: usize,
    pub samples: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.samples as f64 * SAMPLE_PERIOD
    }
}

/// Time-sampled electrode voltages.
///
/// Frame `j` holds the commanded voltages at `t = (j + 1)·SAMPLE_PERIOD`; the
/// voltages at `t = 0` are those of the first keyframe. Within a segment the
/// keyframe index advances linearly in time, and every frame is the linear
/// interpolation of the keyframe voltages times the interpolated confinement
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    keyframes: Vec<Keyframe>,
    scale: Vec<f64>,
    segments: Vec<Segment>,
    frames: Vec<Vec<f64>>,
}

fn check_clamp(frame: &[f64]) -> Result<()> {
    for (i, v) in frame.iter().enumerate() {
        if !(v.abs() <= VOLTAGE_LIMIT) {
            return Err(Error::VoltageClamp { electrode: i, volts: *v, limit: VOLTAGE_LIMIT });
        }
    }
    Ok(())
}

impl Waveform {
    fn assemble(keyframes: Vec<Keyframe>, scale: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut wf = Waveform { keyframes, scale, segments, frames: Vec::new() };
        wf.validate_structure()?;
        let total: usize = wf.segments.iter().map(|s| s.samples).sum();
        let mut frames = Vec::with_capacity(total);
        for seg in &wf.segments {
            let span = (seg.last_keyframe - seg.first_keyframe) as f64;
            for j in 1..=seg.samples {
                let s = seg.first_keyframe as f64 + span * j as f64 / seg.samples as f64;
                let frame = wf.path_voltages(s);
                check_clamp(&frame)?;
                frames.push(frame);
            }
        }
        check_clamp(&wf.path_voltages(0.0))?;
        wf.frames = frames;
        Ok(wf)
    }

    fn validate_structure(&self) -> Result<()> {
        let k = self.keyframes.len();
        if k < 2 {
            return Err(Error::invalid("a waveform needs at least two keyframes"));
        }
        let ne = self.keyframes[0].volts.len();
        if ne == 0 || self.keyframes.iter().any(|kf| kf.volts.len() != ne) {
            return Err(Error::invalid("keyframes must share one electrode count"));
        }
        if self.scale.len() != k || self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("one finite positive scale factor per keyframe required"));
        }
        if self.segments.is_empty() {
            return Err(Error::invalid("a waveform needs at least one segment"));
        }
        let mut next = 0;
        for seg in &self.segments {
            if seg.first_keyframe != next || seg.last_keyframe <= seg.first_keyframe {
                return Err(Error::invalid("segments must tile the keyframe sequence in order"));
            }
            if seg.samples < MIN_SEGMENT_SAMPLES {
                return Err(Error::Resolution(format!(
                    "segment over keyframes {}..{} has {} samples, minimum is {MIN_SEGMENT_SAMPLES}",
                    seg.first_keyframe, seg.last_keyframe, seg.samples
                )));
            }
            next = seg.last_keyframe;
        }
        if next != k - 1 {
            return Err(Error::invalid("segments must end at the last keyframe"));
        }
        Ok(())
    }

    /// Voltages at fractional keyframe index `s`, including the scale.
    pub fn path_voltages(&self, s: f64) -> Vec<f64> {
        let k = self.keyframes.len();
        let s = s.clamp(0.0, (k - 1) as f64);
        let i = (s.floor() as usize).min(k - 2);
        let w = s - i as f64;
        let scale = self.scale[i] + w * (self.scale[i + 1] - self.scale[i]);
        self.keyframes[i]
            .volts
            .iter()
            .zip(&self.keyframes[i + 1].volts)
            .map(|(a, b)| (a + w * (b - a)) * scale)
            .collect()
    }

    /// Fractional keyframe index of a nominal well position.
    pub fn path_index(&self, x: f64) -> f64 {
        let xs: Vec<f64> = self.keyframes.iter().map(|k| k.x).collect();
        let idx: Vec<f64> = (0..xs.len()).map(|i| i as f64).collect();
        if xs[0] <= *xs.last().unwrap() {
            interp(&xs, &idx, x)
        } else {
            let rx: Vec<f64> = xs.iter().rev().copied().collect();
            let ri: Vec<f64> = idx.iter().rev().copied().collect();
            interp(&rx, &ri, x)
        }
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }
    pub fn n_electrodes(&self) -> usize {
        self.keyframes[0].volts.len()
    }
    pub fn initial_voltages(&self) -> Vec<f64> {
        self.path_voltages(0.0)
    }
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 * SAMPLE_PERIOD
    }

    /// Start and end times of segment `k`.
    pub fn segment_window(&self, k: usize) -> (f64, f64) {
        let before: usize = self.segments[..k].iter().map(|s| s.samples).sum();
        let start = before as f64 * SAMPLE_PERIOD;
        (start, start + self.segments[k].duration())
    }

    /// Versioned plain-text form with exact float round trip.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ne = self.n_electrodes();
        let _ = writeln!(out, "{FORMAT_TAG}");
        let _ = writeln!(out, "sample_period_s {SAMPLE_PERIOD:?}");
        let _ = writeln!(out, "electrodes {ne}");
        let _ = writeln!(out, "keyframes {}", self.keyframes.len());
        let _ = writeln!(out, "# x_m scale v_1..v_{ne} (V)");
        for (kf, s) in self.keyframes.iter().zip(&self.scale) {
            let _ = write!(out, "{:?} {:?}", kf.x, s);
            for v in &kf.volts {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "segments {}", self.segments.len());
        let _ = writeln!(out, "# first_keyframe last_keyframe samples");
        for s in &self.segments {
            let _ = writeln!(out, "{} {} {}", s.first_keyframe, s.last_keyframe, s.samples);
        }
        let _ = writeln!(out, "frames {}", self.frames.len());
        let _ = writeln!(out, "# t_s v_1..v_{ne} (V)");
        for (j, f) in self.frames.iter().enumerate() {
            let _ = write!(out, "{:?}", (j + 1) as f64 * SAMPLE_PERIOD);
            for v in f {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let perr = |m: &str| Error::Parse(m.to_string());
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("unexpected end of file before {what}")));
        if next("header")?.trim() != FORMAT_TAG {
            return Err(perr("missing or unsupported waveform header"));
        }
        let header = |line: &str, key: &str| -> Result<String> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("expected '{key}'")));
            }
            it.next().map(str::to_string).ok_or_else(|| Error::Parse(format!("missing value for '{key}'")))
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number '{s}': {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad integer '{s}': {e}")));

        let dt = num(&header(next("sample period")?, "sample_period_s")?)?;
        if dt != SAMPLE_PERIOD {
            return Err(perr("sample period does not match this build"));
        }
        let ne = int(&header(next("electrodes")?, "electrodes")?)?;
        let nk = int(&header(next("keyframes")?, "keyframes")?)?;
        let mut keyframes = Vec::with_capacity(nk);
        let mut scale = Vec::with_capacity(nk);
        for _ in 0..nk {
            let vals = next("keyframe row")?.split_whitespace().map(num).collect::<Result<Vec<f64>>>()?;
            if vals.len() != ne + 2 {
                return Err(perr("keyframe row has the wrong column count"));
            }
            keyframes.push(Keyframe { x: vals[0], volts: vals[2..].to_vec() });
            scale.push(vals[1]);
        }
        let ns = int(&header(next("segments")?, "segments")?)?;
        let mut segments = Vec::with_capacity(ns);
        for _ in 0..ns {
            let vals = next("segment row")?.split_whitespace().map(int).collect::<Result<Vec<usize>>>()?;
            if vals.len() != 3 {
                return Err(perr("segment row needs three columns"));
            }
            segments.push(Segment { first_keyframe: vals[0], last_keyframe: vals[1], samples: vals[2] });
        }
        let nf = int(&header(next("frames")?, "frames")?)?;
        let mut frames = Vec::with_capacity(nf);
        for _ in 0..nf {
            let vals = next("frame row")?.split_whitespace().map(num).collect::<Result<Vec<f64>>>()?;
            if vals.len() != ne + 1 {
                return Err(perr("frame row has the wrong column count"));
            }
            frames.push(vals[1..].to_vec());
        }
        let wf = Waveform::assemble(keyframes, scale, segments)?;
        if wf.frames != frames {
            return Err(perr("frame table is inconsistent with keyframes and segments"));
        }
        Ok(wf)
    }
}

/// Splits `n` items into `parts` nearly equal counts, larger ones first.
fn split_even(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| n / parts + usize::from(k < n % parts)).collect()
}

/// Builds a waveform that visits the keyframes in order over `total_duration`,
/// cut into `n_segments` segments of (nearly) equal keyframe count.
pub fn synthesize_waveform(keyframes: Vec<Keyframe>, total_duration: f64, n_segments: usize) -> Result<Waveform> {
    if keyframes.len() < 2 {
        return Err(Error::invalid("a waveform needs at least two keyframes"));
    }
    if !(total_duration > 0.0) || !total_duration.is_finite() {
        return Err(Error::invalid("waveform duration must be positive"));
    }
    let exact = total_duration / SAMPLE_PERIOD;
    let n_samples = exact.round() as usize;
    if (exact - n_samples as f64).abs() > 1e-6 {
        return Err(Error::invalid(format!("duration {total_duration:e} s is not a whole number of 5 ns samples")));
    }
    let intervals = keyframes.len() - 1;
    if n_segments == 0 || n_segments > intervals {
        return Err(Error::invalid(format!("cannot cut {intervals} keyframe intervals into {n_segments} segments")));
    }
    let per_segment = split_even(intervals, n_segments);
    let mut segments = Vec::with_capacity(n_segments);
    let mut first = 0;
    let mut assigned = 0;
    for (k, &count) in per_segment.iter().enumerate() {
        let last = first + count;
        // cumulative rounding keeps the total exact
        let end = ((last as f64 / intervals as f64) * n_samples as f64).round() as usize;
        let end = if k + 1 == n_segments { n_samples } else { end };
        segments.push(Segment { first_keyframe: first, last_keyframe: last, samples: end - assigned });
        assigned = end;
        first = last;
    }
    let scale = vec![1.0; keyframes.len()];
    Waveform::assemble(keyframes, scale, segments)
}

/// Multiplies the voltages by a position-dependent factor interpolated from
/// `(positions, factors)` onto the keyframes.
pub fn apply_confinement_scaling(wf: &Waveform, positions: &[f64], factors: &[f64]) -> Result<Waveform> {
    if positions.len() != factors.len() || positions.is_empty() {
        return Err(Error::invalid("one factor per measurement position required"));
    }
    if factors.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid("scale factors must be finite and positive"));
    }
    if positions.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("measurement positions must be increasing"));
    }
    let scale = wf
        .keyframes
        .iter()
        .zip(&wf.scale)
        .map(|(kf, s)| s * interp(positions, factors, kf.x))
        .collect();
    Waveform::assemble(wf.keyframes.clone(), scale, wf.segments.clone())
}

/// Multiplies each segment duration by its stretch factor, keeping the path.
pub fn retime_segments(wf: &Waveform, factors: &[f64]) -> Result<Waveform> {
    if factors.len() != wf.segments.len() {
        return Err(Error::invalid(format!("expected {} stretch factors, got {}", wf.segments.len(), factors.len())));
    }
    if factors.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid("stretch factors must be finite and positive"));
    }
    let segments = wf
        .segments
        .iter()
        .zip(factors)
        .map(|(s, f)| Segment { samples: (s.samples as f64 * f).round() as usize, ..*s })
        .collect();
    Waveform::assemble(wf.keyframes.clone(), wf.scale.clone(), segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keyframes(n: usize) -> Vec<Keyframe> {
        (0..n)
            .map(|k| Keyframe { x: k as f64 * 2e-6, volts: vec![k as f64 * 0.1, 1.0 - k as f64 * 0.05, 0.3] })
            .collect()
    }

    #[test]
    fn identical_keyframes_give_constant_frames() {
        let kf = vec![Keyframe { x: 0.0, volts: vec![1.0, -2.0] }; 2];
        let wf = synthesize_waveform(kf, 1e-6, 1).unwrap();
        assert!(wf.frames().iter().all(|f| f == &vec![1.0, -2.0]));
    }

    #[test]
    fn frame_count_matches_duration() {
        let wf = synthesize_waveform(keyframes(41), 160e-6, 8).unwrap();
        assert_eq!(wf.frames().len(), 32_000);
        assert_eq!(wf.segments().iter().map(|s| s.samples).sum::<usize>(), 32_000);
        assert!(wf.segments().iter().all(|s| s.samples == 4000 && s.last_keyframe - s.first_keyframe == 5));
        assert!(synthesize_waveform(keyframes(41), 160.0012e-6, 8).is_err());
    }

    #[test]
    fn unit_factors_are_identity() {
        let wf = synthesize_waveform(keyframes(41), 160e-6, 8).unwrap();
        assert_eq!(retime_segments(&wf, &[1.0; 8]).unwrap(), wf);
        let pos = [0.0, 40e-6, 80e-6];
        assert_eq!(apply_confinement_scaling(&wf, &pos, &[1.0; 3]).unwrap(), wf);
    }

    #[test]
    fn short_segments_are_rejected() {
        let wf = synthesize_waveform(keyframes(41), 160e-6, 8).unwrap();
        let mut f = [1.0; 8];
        f[3] = 1e-3;
        assert!(matches!(retime_segments(&wf, &f), Err(Error::Resolution(_))));
    }

    #[test]
    fn clamp_violation_is_an_error() {
        let kf = vec![Keyframe { x: 0.0, volts: vec![11.0] }, Keyframe { x: 1e-6, volts: vec![11.5] }];
        let wf = synthesize_waveform(kf, 1e-6, 1).unwrap();
        assert!(matches!(apply_confinement_scaling(&wf, &[0.0], &[1.1]), Err(Error::VoltageClamp { .. })));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let wf = synthesize_waveform(keyframes(11), 2e-6, 2).unwrap();
        let wf = apply_confinement_scaling(&wf, &[0.0, 20e-6], &[1.0 / 3.0, 1.07]).unwrap();
        let text = wf.to_text();
        let back = Waveform::from_text(&text).unwrap();
        assert_eq!(back, wf);
        assert_eq!(back.to_text(), text);
        assert!(Waveform::from_text(&text.replace("v1", "v9")).is_err());
    }
}
