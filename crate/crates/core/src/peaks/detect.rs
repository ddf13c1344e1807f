use super::{Detector, PeakSet};
use crate::{Error, Result};

/// Local-maximum predicate extended to plateaus: `x[i] > x[i-1]`, and the
/// first sample after the run of values equal to `x[i]` is lower.
pub fn is_local_max(x: &[f64], i: usize) -> bool {
    if i == 0 || i + 1 >= x.len() || x[i] <= x[i - 1] {
        return false;
    }
    let mut j = i + 1;
    while j < x.len() && x[j] == x[i] {
        j += 1;
    }
    j < x.len() && x[j] < x[i]
}

/// Plateau-aware local maxima, leftmost sample of each plateau.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i + 1;
            while j < n && x[j] == x[i] {
                j += 1;
            }
            if j < n && x[j] < x[i] {
                out.push(i);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Topographic prominence of the local maximum at `peak`: the peak height
/// above the higher of the two lowest points reached before climbing to
/// higher terrain (or the signal edge) on either side.
pub fn prominence(x: &[f64], peak: usize) -> Result<f64> {
    if !is_local_max(x, peak) {
        return Err(Error::domain(format!("index {peak} is not a local maximum")));
    }
    Ok(prominence_unchecked(x, peak))
}

fn prominence_unchecked(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Threshold detector on `x² / rms`. Positive local maxima whose power is at
/// least `(1 - sensitivity)` times the largest such power are kept.
pub fn detect_tb(x: &[f64], sensitivity: f64) -> PeakSet {
    let n = x.len().max(1) as f64;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 || !rms.is_finite() {
        return PeakSet::from_indices(x, Vec::new(), Detector::Tb, sensitivity);
    }
    let candidates: Vec<usize> = local_maxima(x).into_iter().filter(|&i| x[i] > 0.0).collect();
    let power = |i: usize| x[i] * x[i] / rms;
    let top = candidates.iter().map(|&i| power(i)).fold(0.0, f64::max);
    let threshold = (1.0 - sensitivity) * top;
    tb_with_threshold(x, &candidates, rms, threshold, sensitivity)
}

fn tb_with_threshold(x: &[f64], candidates: &[usize], rms: f64, threshold: f64, sensitivity: f64) -> PeakSet {
    let keep = candidates.iter().copied().filter(|&i| x[i] * x[i] / rms >= threshold).collect();
    PeakSet::from_indices(x, keep, Detector::Tb, sensitivity)
}

/// TB detector with an absolute power threshold.
pub fn detect_tb_power(x: &[f64], threshold: f64) -> PeakSet {
    let n = x.len().max(1) as f64;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 || !rms.is_finite() {
        return PeakSet::from_indices(x, Vec::new(), Detector::Tb, f64::NAN);
    }
    let candidates: Vec<usize> = local_maxima(x).into_iter().filter(|&i| x[i] > 0.0).collect();
    tb_with_threshold(x, &candidates, rms, threshold, f64::NAN)
}

/// Output of the lookahead detector.
#[derive(Clone, Debug, PartialEq)]
pub struct PdResult {
    pub maxima: PeakSet,
    pub minima: Vec<usize>,
}

/// Lookahead detector. A local maximum is confirmed when it is the highest
/// sample within `lookahead` samples on both sides and the signal falls at
/// least `delta` below it within `lookahead` samples on both sides. Minima
/// are confirmed symmetrically.
pub fn detect_pd(x: &[f64], lookahead: usize, delta: f64) -> Result<PdResult> {
    if lookahead < 1 {
        return Err(Error::config("lookahead must be at least 1"));
    }
    if lookahead >= x.len() {
        return Err(Error::config(format!(
            "lookahead {lookahead} not shorter than signal length {}",
            x.len()
        )));
    }
    let maxima = confirmed(x, lookahead, delta);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let minima = confirmed(&neg, lookahead, delta);
    Ok(PdResult { maxima: PeakSet::from_indices(x, maxima, Detector::Pd, f64::NAN), minima })
}

fn confirmed(x: &[f64], lookahead: usize, delta: f64) -> Vec<usize> {
    let n = x.len();
    local_maxima(x)
        .into_iter()
        .filter(|&i| {
            let h = x[i];
            let left = &x[i.saturating_sub(lookahead)..i];
            let right = &x[i + 1..(i + 1 + lookahead).min(n)];
            left.iter().all(|&v| v < h)
                && right.iter().all(|&v| v <= h)
                && left.iter().any(|&v| v <= h - delta)
                && right.iter().any(|&v| v <= h - delta)
        })
        .collect()
}

/// First-difference detector: `+` to `-` sign changes (plateaus skipped) at
/// or above `min_amplitude`.
pub fn detect_dp(x: &[f64], min_amplitude: f64) -> PeakSet {
    let keep = local_maxima(x).into_iter().filter(|&i| x[i] >= min_amplitude).collect();
    PeakSet::from_indices(x, keep, Detector::Dp, f64::NAN)
}

/// Prominence detector.
pub fn detect_sd(x: &[f64], min_prominence: f64) -> PeakSet {
    let keep = local_maxima(x)
        .into_iter()
        .filter(|&i| prominence_unchecked(x, i) >= min_prominence)
        .collect();
    PeakSet::from_indices(x, keep, Detector::Sd, f64::NAN)
}
