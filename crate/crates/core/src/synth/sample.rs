//! Random passage populations.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::defect::{sample_defect_at, DefectKind, DefectSite, DEFAULT_WHEEL_RADIUS_MM, FLAT_L1, FLAT_L2, POLY_SEVERITY};
use super::passage::{PassageSpec, DEFAULT_SAMPLE_RATE_HZ, DEFAULT_SNR_DB};
use super::train::{LoadScheme, TrainKind};
use crate::rng::{derive, stage_rng};
use crate::{Error, Result};

/// Distribution of passages in a population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    /// Probability that a passage is a Laagrss train.
    pub laagrss_share: f64,
    /// Speed band as fractions of each train's admissible range.
    pub speed_band: (f64, f64),
    pub loads: Vec<LoadScheme>,
    /// Fraction of defective passages, rounded to a whole count.
    pub anomaly_share: f64,
    /// Loads of defective passages; `None` uses `loads`.
    pub defective_loads: Option<Vec<LoadScheme>>,
    /// Speed interval of defective passages in km/h, intersected with the
    /// train's range; `None` uses `speed_band`.
    pub defective_speed_kmh: Option<(f64, f64)>,
    /// Flat-length intervals, one drawn per flat.
    pub flat_intervals: Vec<(f64, f64)>,
    pub poly_interval: (f64, f64),
    pub wheel_radius_mm: f64,
    pub snr_db: Option<f64>,
    pub sample_rate_hz: f64,
}

impl Default for SamplingSpec {
    /// Baseline passages over every load scheme and the full speed range;
    /// defective passages fully loaded at 60-200 km/h.
    fn default() -> Self {
        SamplingSpec {
            laagrss_share: 0.5,
            speed_band: (0.0, 1.0),
            loads: LoadScheme::ALL.to_vec(),
            anomaly_share: 0.5,
            defective_loads: Some(vec![LoadScheme::Full]),
            defective_speed_kmh: Some((60.0, 200.0)),
            flat_intervals: vec![FLAT_L1, FLAT_L2],
            poly_interval: POLY_SEVERITY,
            wheel_radius_mm: DEFAULT_WHEEL_RADIUS_MM,
            snr_db: Some(DEFAULT_SNR_DB),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.speed_band;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::config("speed band must be an interval inside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.laagrss_share) || !(0.0..=1.0).contains(&self.anomaly_share) {
            return Err(Error::config("shares must lie in [0, 1]"));
        }
        if self.loads.is_empty() || self.defective_loads.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::config("load mix is empty"));
        }
        if self.flat_intervals.is_empty() {
            return Err(Error::config("no flat-length interval"));
        }
        if let Some((lo, hi)) = self.defective_speed_kmh {
            for kind in TrainKind::ALL {
                let (tlo, thi) = kind.speed_range_kmh();
                if lo.max(tlo) > hi.min(thi) {
                    return Err(Error::config(format!("defective speed interval misses the {} range", kind.name())));
                }
            }
        }
        Ok(())
    }
}

/// Defect combination of a passage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyType {
    #[serde(rename = "-")]
    None,
    #[serde(rename = "F")]
    Flat,
    #[serde(rename = "P")]
    Poly,
    #[serde(rename = "F+P")]
    FlatPoly,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 4] = [AnomalyType::Poly, AnomalyType::Flat, AnomalyType::FlatPoly, AnomalyType::None];

    pub fn of(spec: &PassageSpec) -> Self {
        match (spec.has_kind(DefectKind::Flat), spec.has_kind(DefectKind::Polygonization)) {
            (false, false) => AnomalyType::None,
            (true, false) => AnomalyType::Flat,
            (false, true) => AnomalyType::Poly,
            (true, true) => AnomalyType::FlatPoly,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AnomalyType::None => "-",
            AnomalyType::Flat => "F",
            AnomalyType::Poly => "P",
            AnomalyType::FlatPoly => "F+P",
        }
    }
}

/// Draw one passage. Defective passages get one of F, P or F+P with equal
/// probability; F places one or two flats (1st and 3rd left wheel of the
/// third wagon).
pub fn sample_passage(spec: &SamplingSpec, anomalous: bool, seed: u64) -> Result<PassageSpec> {
    let mut rng = stage_rng(seed, "passage", 0);
    let kind = if rng.random_bool(spec.laagrss_share) { TrainKind::Laagrss } else { TrainKind::Alfa };
    let (tlo, thi) = kind.speed_range_kmh();
    let (lo, hi) = match (anomalous, spec.defective_speed_kmh) {
        (true, Some((a, b))) => (a.max(tlo), b.min(thi)),
        _ => (tlo + spec.speed_band.0 * (thi - tlo), tlo + spec.speed_band.1 * (thi - tlo)),
    };
    let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let loads = match (anomalous, &spec.defective_loads) {
        (true, Some(l)) => l,
        _ => &spec.loads,
    };
    let load = *loads.choose(&mut rng).expect("validated load mix");

    let mut defects = Vec::new();
    if anomalous {
        let kind_pick = rng.random_range(0..3);
        if kind_pick != 1 {
            let sites: &[DefectSite] = if rng.random_bool(0.5) {
                &[DefectSite::FLAT_FIRST]
            } else {
                &[DefectSite::FLAT_FIRST, DefectSite::FLAT_THIRD]
            };
            for &site in sites {
                let interval = *spec.flat_intervals.choose(&mut rng).expect("validated intervals");
                defects.push(sample_defect_at(DefectKind::Flat, interval, site, spec.wheel_radius_mm, &mut rng)?);
            }
        }
        if kind_pick != 0 {
            defects.push(sample_defect_at(
                DefectKind::Polygonization,
                spec.poly_interval,
                DefectSite::POLY,
                spec.wheel_radius_mm,
                &mut rng,
            )?);
        }
    }
    let mut p = PassageSpec::new(kind, speed, load, derive(seed, "passage-signal", 0)).with_defects(defects);
    p.snr_db = spec.snr_db;
    p.sample_rate_hz = spec.sample_rate_hz;
    p.validate()?;
    Ok(p)
}

/// Draw `n` passages, exactly `round(n · anomaly_share)` of them defective,
/// in shuffled order.
pub fn sample_passages(spec: &SamplingSpec, n: usize, seed: u64) -> Result<Vec<PassageSpec>> {
    spec.validate()?;
    let n_bad = (n as f64 * spec.anomaly_share).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < n_bad).collect();
    flags.shuffle(&mut stage_rng(seed, "passage-order", 0));
    flags
        .iter()
        .enumerate()
        .map(|(i, &bad)| sample_passage(spec, bad, derive(seed, "passage", i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_defect_table() {
        let specs = sample_passages(&SamplingSpec::default(), 300, 5).unwrap();
        assert_eq!(specs.iter().filter(|s| s.is_anomalous()).count(), 150);
        let mut types = std::collections::BTreeSet::new();
        for s in &specs {
            if s.is_anomalous() {
                assert_eq!(s.load_scheme, LoadScheme::Full);
                assert!(s.speed_kmh >= 60.0 && s.speed_kmh <= 200.0);
                assert!(s.defects.len() <= 3);
            }
            types.insert(AnomalyType::of(s));
        }
        assert_eq!(types.len(), 4);
        assert!(specs.iter().any(|s| !s.is_anomalous() && s.load_scheme != LoadScheme::Full));
    }

    #[test]
    fn speed_band_is_respected() {
        let spec = SamplingSpec { speed_band: (0.0, 0.25), anomaly_share: 0.0, ..Default::default() };
        for s in sample_passages(&spec, 50, 1).unwrap() {
            let (lo, hi) = s.train_type.speed_range_kmh();
            assert!(s.speed_kmh <= lo + 0.25 * (hi - lo) + 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_passages(&SamplingSpec::default(), 20, 9).unwrap();
        assert_eq!(a, sample_passages(&SamplingSpec::default(), 20, 9).unwrap());
        assert_ne!(a, sample_passages(&SamplingSpec::default(), 20, 10).unwrap());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let spec = SamplingSpec { speed_band: (0.8, 0.2), ..Default::default() };
        assert!(spec.validate().is_err());
        let spec = SamplingSpec { defective_speed_kmh: Some((150.0, 200.0)), ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
