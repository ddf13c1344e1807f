use serde::{Deserialize, Serialize};

use super::PeakSet;
use crate::synth::TrainType;
use crate::{Error, Result};

/// Axle semantics extracted from one strain signal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticFeatures {
    pub wheel_count: usize,
    /// Wheel passage times, seconds.
    pub wheel_times_s: Vec<f64>,
    /// Strain at each wheel, µm/m.
    pub deformations: Vec<f64>,
    /// Payload in tonnes.
    pub context_load: Option<f64>,
    /// Speed in km/h.
    pub context_speed: Option<f64>,
}

pub fn extract_semantics(peaks: &PeakSet, sample_rate_hz: f64) -> SemanticFeatures {
    SemanticFeatures {
        wheel_count: peaks.len(),
        wheel_times_s: peaks.indices.iter().map(|&i| i as f64 / sample_rate_hz).collect(),
        deformations: peaks.amplitudes.clone(),
        context_load: None,
        context_speed: None,
    }
}

/// Gap statistic the grouping threshold is relative to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapReference {
    Median,
    Max,
}

/// Consecutive wheels closer than `ratio × reference gap` share a group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingRule {
    pub ratio: f64,
    pub reference: GapReference,
}

impl Default for GroupingRule {
    fn default() -> Self {
        // With bogies the median gap is the short intra-bogie gap, so a
        // median reference would never group anything on passenger trains.
        GroupingRule { ratio: 0.4, reference: GapReference::Max }
    }
}

pub fn group_sizes(times: &[f64], rule: GroupingRule) -> Vec<usize> {
    if times.len() < 2 {
        return if times.is_empty() { Vec::new() } else { vec![1] };
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let reference = match rule.reference {
        GapReference::Max => gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        GapReference::Median => median(&gaps),
    };
    let threshold = rule.ratio * reference;
    let mut sizes = vec![1];
    for g in gaps {
        if g < threshold {
            *sizes.last_mut().unwrap() += 1;
        } else {
            sizes.push(1);
        }
    }
    sizes
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxleCountCheck {
    pub count_match: bool,
    pub grouping_match: bool,
}

pub fn axle_count_accuracy(detected: &SemanticFeatures, truth: &TrainType, rule: GroupingRule) -> AxleCountCheck {
    AxleCountCheck {
        count_match: detected.wheel_count == truth.expected_wheel_count,
        grouping_match: group_sizes(&detected.wheel_times_s, rule) == truth.expected_grouping,
    }
}

/// Match each detected time to the nearest truth time within half the
/// smallest truth gap. Returns the matched truth index per detection.
pub fn match_to_truth(detected: &[f64], truth: &[f64]) -> Vec<Option<usize>> {
    let tol = truth.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / 2.0;
    detected
        .iter()
        .map(|&t| {
            truth
                .iter()
                .enumerate()
                .map(|(k, &u)| (k, (u - t).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|&(_, d)| d <= tol)
                .map(|(k, _)| k)
        })
        .collect()
}

/// Speed from one sensor and the known axle layout: median of axle spacing
/// over time gap across consecutive peak pairs.
pub fn estimate_speed(peaks: &PeakSet, train: &TrainType, sample_rate_hz: f64) -> Result<f64> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!("{} peaks, need at least 2", peaks.len())));
    }
    if peaks.len() != train.axle_positions.len() {
        return Err(Error::InsufficientData(format!(
            "{} peaks cannot be matched to {} axles",
            peaks.len(),
            train.axle_positions.len()
        )));
    }
    let ratios: Vec<f64> = peaks
        .indices
        .windows(2)
        .zip(train.axle_positions.windows(2))
        .map(|(p, a)| (a[1] - a[0]) / ((p[1] - p[0]) as f64 / sample_rate_hz))
        .collect();
    Ok(median(&ratios) * 3.6)
}

/// Travel direction relative to the sensor pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Sensor A is passed first.
    Forward,
    Backward,
}

/// Speed and direction from two sensors `gap_m` apart. Uses the median lag
/// of index-matched peaks when both sensors see the same count, otherwise
/// the lag between the first peaks.
pub fn estimate_speed_direction(a: &PeakSet, b: &PeakSet, gap_m: f64, sample_rate_hz: f64) -> Result<(f64, Direction)> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 2 {
        return Err(Error::InsufficientData("both sensors need at least one peak".into()));
    }
    let lag_samples = if a.len() == b.len() {
        let lags: Vec<f64> = a.indices.iter().zip(&b.indices).map(|(&i, &j)| j as f64 - i as f64).collect();
        median(&lags)
    } else {
        b.indices[0] as f64 - a.indices[0] as f64
    };
    if lag_samples == 0.0 {
        return Err(Error::Degenerate("zero lag between sensors".into()));
    }
    let speed = gap_m / (lag_samples.abs() / sample_rate_hz) * 3.6;
    let dir = if lag_samples > 0.0 { Direction::Forward } else { Direction::Backward };
    Ok((speed, dir))
}

/// Weighting of anomaly detection vs axle counting scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Equal,
    Ad80,
}

impl Weighting {
    pub fn ad_weight(self) -> f64 {
        match self {
            Weighting::Equal => 0.5,
            Weighting::Ad80 => 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityChoice {
    pub equal: f64,
    pub ad80: f64,
    /// The anomaly-detection-weighted pick; equals `equal` when both agree.
    pub chosen: f64,
}

fn argmax_weighted(ac: &[f64], ad: &[f64], w: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (a, d)) in ac.iter().zip(ad).enumerate() {
        let s = w * d + (1.0 - w) * a;
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

pub fn select_sensitivity(grid: &[f64], ac: &[f64], ad: &[f64]) -> Result<SensitivityChoice> {
    if grid.is_empty() {
        return Err(Error::domain("empty sensitivity grid"));
    }
    if ac.len() != grid.len() || ad.len() != grid.len() {
        return Err(Error::domain("score arrays not aligned with the grid"));
    }
    let equal = grid[argmax_weighted(ac, ad, Weighting::Equal.ad_weight())];
    let ad80 = grid[argmax_weighted(ac, ad, Weighting::Ad80.ad_weight())];
    Ok(SensitivityChoice { equal, ad80, chosen: ad80 })
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peaks::{Detector, PeakConfig};
    use crate::synth::{synthesize_passage, LoadScheme, PassageSpec, TrainKind};
    use proptest::prelude::*;

    fn times_for(train: &TrainType, speed_kmh: f64) -> Vec<f64> {
        train.axle_positions.iter().map(|p| p / (speed_kmh / 3.6)).collect()
    }

    fn sem(times: Vec<f64>) -> SemanticFeatures {
        SemanticFeatures { wheel_count: times.len(), deformations: vec![1.0; times.len()], wheel_times_s: times, ..Default::default() }
    }

    #[test]
    fn empty_peaks_give_empty_semantics() {
        let set = PeakSet { indices: vec![], amplitudes: vec![], algorithm: Detector::Sd, sensitivity: 0.5 };
        let s = extract_semantics(&set, 2000.0);
        assert_eq!(s.wheel_count, 0);
        assert!(s.wheel_times_s.is_empty() && s.deformations.is_empty());
    }

    #[test]
    fn grouping_examples() {
        for kind in TrainKind::ALL {
            let train = kind.train_type();
            let check = axle_count_accuracy(&sem(times_for(&train, 80.0)), &train, GroupingRule::default());
            assert_eq!(check, AxleCountCheck { count_match: true, grouping_match: true }, "{kind:?}");
        }
        let train = TrainKind::Laagrss.train_type();
        let mut t = times_for(&train, 80.0);
        t.remove(4);
        let check = axle_count_accuracy(&sem(t), &train, GroupingRule::default());
        assert_eq!(check, AxleCountCheck { count_match: false, grouping_match: false });

        // Merge the second pair into one detection and add a spurious one
        // in the middle of a long gap.
        let mut t = times_for(&train, 80.0);
        let merged = (t[3] + t[4]) / 2.0;
        t.splice(3..5, [merged]);
        t.push((t[5] + t[6]) / 2.0);
        t.sort_by(f64::total_cmp);
        let check = axle_count_accuracy(&sem(t), &train, GroupingRule::default());
        assert_eq!(check, AxleCountCheck { count_match: true, grouping_match: false });
    }

    #[test]
    fn median_reference_fails_on_bogies() {
        let train = TrainKind::Alfa.train_type();
        let rule = GroupingRule { ratio: 0.4, reference: GapReference::Median };
        assert_ne!(group_sizes(&times_for(&train, 100.0), rule), train.expected_grouping);
        let train = TrainKind::Laagrss.train_type();
        assert_eq!(group_sizes(&times_for(&train, 100.0), rule), train.expected_grouping);
    }

    #[test]
    fn semantics_follow_synthetic_truth() {
        let spec = PassageSpec::new(TrainKind::Laagrss, 100.0, LoadScheme::Unbalance1, 9).noise_free();
        let rec = synthesize_passage(&spec).unwrap();
        let set = Detector::Sd.detect(&rec.strain, 0.8, &PeakConfig::default()).unwrap();
        let s = extract_semantics(&set, rec.sample_rate_hz);
        assert_eq!(s.wheel_count, 10);
        let dt = 2.0 / rec.sample_rate_hz;
        for (a, b) in s.wheel_times_s.iter().zip(&rec.wheel_pass_times) {
            assert!((a - b).abs() <= dt);
        }
        let matched = match_to_truth(&s.wheel_times_s, &rec.wheel_pass_times);
        assert_eq!(matched, (0..10).map(Some).collect::<Vec<_>>());

        let train = spec.train();
        let (mut heavy, mut light) = (Vec::new(), Vec::new());
        for (axle, y) in s.deformations.iter().enumerate() {
            if train.is_front_half(axle) { heavy.push(*y) } else { light.push(*y) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&heavy) > mean(&light));

        let v = estimate_speed(&set, &train, rec.sample_rate_hz).unwrap();
        assert!((v - 100.0).abs() < 1.0, "{v}");
    }

    #[test]
    fn dual_sensor_speed_and_direction() {
        let mut spec = PassageSpec::new(TrainKind::Alfa, 150.0, LoadScheme::Full, 2).noise_free();
        spec.second_sensor_gap_m = Some(3.0);
        let rec = synthesize_passage(&spec).unwrap();
        let cfg = PeakConfig::default();
        let a = Detector::Sd.detect(&rec.strain, 0.8, &cfg).unwrap();
        let b = Detector::Sd.detect(rec.strain_secondary.as_ref().unwrap(), 0.8, &cfg).unwrap();
        let (v, dir) = estimate_speed_direction(&a, &b, 3.0, rec.sample_rate_hz).unwrap();
        assert!((v - 150.0).abs() < 1.5, "{v}");
        assert_eq!(dir, Direction::Forward);
        let (v2, dir2) = estimate_speed_direction(&b, &a, 3.0, rec.sample_rate_hz).unwrap();
        assert_eq!(v, v2);
        assert_eq!(dir2, Direction::Backward);
        // Replaying at half speed doubles every index gap.
        let stretch = |p: &PeakSet| PeakSet { indices: p.indices.iter().map(|i| 2 * i).collect(), ..p.clone() };
        let (v3, _) = estimate_speed_direction(&stretch(&a), &stretch(&b), 3.0, rec.sample_rate_hz).unwrap();
        assert!((v3 - v / 2.0).abs() < 1e-9);
        let one = PeakSet { indices: vec![], amplitudes: vec![], ..a.clone() };
        assert!(matches!(estimate_speed_direction(&one, &b, 3.0, 2000.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sensitivity_selection_examples() {
        let grid = [0.1, 0.2, 0.3];
        let c = select_sensitivity(&grid, &[0.2, 0.9, 0.5], &[0.7, 0.7, 0.7]).unwrap();
        assert_eq!((c.equal, c.ad80, c.chosen), (0.2, 0.2, 0.2));
        let c = select_sensitivity(&grid, &[1.0, 0.5, 0.0], &[0.5, 0.7, 0.9]).unwrap();
        assert_eq!((c.equal, c.ad80, c.chosen), (0.1, 0.3, 0.3));
        assert_eq!(select_sensitivity(&[0.4], &[0.1], &[0.2]).unwrap().chosen, 0.4);
        assert!(select_sensitivity(&[], &[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn selection_is_invariant_to_affine_rescaling(
            scores in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..12),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let grid: Vec<f64> = (0..scores.len()).map(|i| i as f64 / 10.0).collect();
            let ac: Vec<f64> = scores.iter().map(|s| s.0).collect();
            let ad: Vec<f64> = scores.iter().map(|s| s.1).collect();
            let ac2: Vec<f64> = ac.iter().map(|v| scale * v + shift).collect();
            let ad2: Vec<f64> = ad.iter().map(|v| scale * v + shift).collect();
            // Exact ties may resolve differently after rounding; compare scores.
            let pick = select_sensitivity(&grid, &ac, &ad).unwrap().chosen;
            let pick2 = select_sensitivity(&grid, &ac2, &ad2).unwrap().chosen;
            let combined = |g: f64| { let i = (g * 10.0).round() as usize; 0.8 * ad[i] + 0.2 * ac[i] };
            prop_assert!((combined(pick) - combined(pick2)).abs() < 1e-9);
        }
    }
}
