//! Peak detection on strain signals and axle semantics.
//!
//! Four detectors share one sensitivity scale in `[0, 1]`: a higher
//! sensitivity lowers the detector's threshold. All detectors only ever
//! report local maxima; on a plateau the leftmost sample is reported.

mod detect;
mod semantics;

pub use detect::{
    detect_dp, detect_pd, detect_sd, detect_tb, detect_tb_power, is_local_max, local_maxima, prominence, PdResult,
};
pub use semantics::{
    axle_count_accuracy, estimate_speed, estimate_speed_direction, extract_semantics, group_sizes,
    match_to_truth, select_sensitivity, AxleCountCheck, Direction, GapReference, GroupingRule,
    SemanticFeatures, SensitivityChoice, Weighting,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Peak detection algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    /// Threshold on RMS-normalized signal power.
    #[serde(rename = "tb")]
    Tb,
    /// Lookahead extremum confirmation.
    #[serde(rename = "pd")]
    Pd,
    /// Sign changes of the first difference.
    #[serde(rename = "dp")]
    Dp,
    /// Prominence threshold.
    #[serde(rename = "sd")]
    Sd,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::Tb, Detector::Pd, Detector::Dp, Detector::Sd];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Tb => "TB",
            Detector::Pd => "PD",
            Detector::Dp => "DP",
            Detector::Sd => "SD",
        }
    }

    /// Run the detector with a sensitivity in `[0, 1]`.
    pub fn detect(self, signal: &[f64], sensitivity: f64, cfg: &PeakConfig) -> Result<PeakSet> {
        if !(0.0..=1.0).contains(&sensitivity) {
            return Err(Error::domain(format!("sensitivity {sensitivity} outside [0, 1]")));
        }
        let relax = 1.0 - sensitivity;
        let (lo, hi) = min_max(signal);
        let range = hi - lo;
        let mut set = match self {
            Detector::Tb => detect_tb(signal, sensitivity),
            Detector::Pd => detect_pd(signal, cfg.lookahead, relax * range)?.maxima,
            Detector::Dp => detect_dp(signal, lo + relax * range),
            Detector::Sd => detect_sd(signal, relax * range),
        };
        set.sensitivity = sensitivity;
        Ok(set)
    }
}

impl Detector {
    /// Condition a raw strain recording and detect its peaks.
    pub fn detect_strain(self, strain: &[f64], sample_rate_hz: f64, sensitivity: f64, cfg: &PeakConfig) -> Result<PeakSet> {
        let smoothed = condition(strain, sample_rate_hz, cfg.smoothing_s);
        self.detect(&smoothed, sensitivity, cfg)
    }
}

/// Zero-phase low-pass: two passes of a centred moving average `width_s`
/// wide. Edges average over the available samples.
pub fn condition(x: &[f64], sample_rate_hz: f64, width_s: f64) -> Vec<f64> {
    let half = (width_s * sample_rate_hz / 2.0).round() as usize;
    if half == 0 {
        return x.to_vec();
    }
    let pass = |x: &[f64]| -> Vec<f64> {
        let mut prefix = Vec::with_capacity(x.len() + 1);
        prefix.push(0.0);
        for v in x {
            prefix.push(prefix.last().unwrap() + v);
        }
        (0..x.len())
            .map(|i| {
                let a = i.saturating_sub(half);
                let b = (i + half + 1).min(x.len());
                (prefix[b] - prefix[a]) / (b - a) as f64
            })
            .collect()
    };
    pass(&pass(x))
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tb" => Ok(Detector::Tb),
            "pd" => Ok(Detector::Pd),
            "dp" => Ok(Detector::Dp),
            "sd" => Ok(Detector::Sd),
            _ => Err(Error::config(format!("unknown detector `{s}` (tb, pd, dp, sd)"))),
        }
    }
}

/// Detector settings that are not driven by the sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakConfig {
    /// Lookahead of the PD detector, samples.
    pub lookahead: usize,
    /// Width of the moving average applied (twice, centred) to strain
    /// before detection, seconds. Zero disables conditioning.
    pub smoothing_s: f64,
    pub grouping: GroupingRule,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig { lookahead: 50, smoothing_s: 0.01, grouping: GroupingRule::default() }
    }
}

/// Detected peaks of one signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub indices: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub algorithm: Detector,
    pub sensitivity: f64,
}

impl PeakSet {
    pub(crate) fn from_indices(signal: &[f64], indices: Vec<usize>, algorithm: Detector, sensitivity: f64) -> Self {
        let amplitudes = indices.iter().map(|&i| signal[i]).collect();
        PeakSet { indices, amplitudes, algorithm, sensitivity }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub(crate) fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}
