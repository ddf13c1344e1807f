//! Wheel flat and polygonization geometry.

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Flat-length interval L1, mm.
pub const FLAT_L1: (f64, f64) = (25.0, 50.0);
/// Flat-length interval L2, mm.
pub const FLAT_L2: (f64, f64) = (50.0, 100.0);
/// Peak polygonization amplitude interval, mm.
pub const POLY_SEVERITY: (f64, f64) = (0.8, 1.2);

/// Admissible flat lengths for sampling, mm.
const FLAT_BOUNDS: (f64, f64) = (10.0, 100.0);
/// Admissible peak polygonization amplitudes for sampling, mm.
const POLY_BOUNDS: (f64, f64) = (0.25, 1.2);

pub const HARMONICS: usize = 20;
pub const DEFAULT_WHEEL_RADIUS_MM: f64 = 460.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Flat,
    Polygonization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WheelPosition {
    /// Axle position inside the wagon, 0 = leading axle.
    pub axle_in_wagon: usize,
    pub side: Side,
}

/// Where a defect sits on the train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefectSite {
    pub wagon_index: usize,
    pub wheel_position: WheelPosition,
}

impl DefectSite {
    /// Flats: 3rd wagon, 1st left wheel.
    pub const FLAT_FIRST: DefectSite = DefectSite {
        wagon_index: 2,
        wheel_position: WheelPosition { axle_in_wagon: 0, side: Side::Left },
    };
    /// Flats: 3rd wagon, 3rd left wheel (clamped to the last axle on
    /// two-axle wagons).
    pub const FLAT_THIRD: DefectSite = DefectSite {
        wagon_index: 2,
        wheel_position: WheelPosition { axle_in_wagon: 2, side: Side::Left },
    };
    /// Polygonization: 1st wagon, 1st right wheel.
    pub const POLY: DefectSite = DefectSite {
        wagon_index: 0,
        wheel_position: WheelPosition { axle_in_wagon: 0, side: Side::Right },
    };

    pub fn default_for(kind: DefectKind) -> Self {
        match kind {
            DefectKind::Flat => Self::FLAT_FIRST,
            DefectKind::Polygonization => Self::POLY,
        }
    }
}

/// A defect on one wheel.
///
/// Constructed through [`WheelDefect::flat`] / [`WheelDefect::polygonization`]
/// (or deserialization, which runs the same validation) so the derived depth
/// and the phase range always hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DefectRecord", into = "DefectRecord")]
pub struct WheelDefect {
    pub kind: DefectKind,
    pub wagon_index: usize,
    pub wheel_position: WheelPosition,
    /// Flat length L_w, mm (0 for polygonization).
    pub flat_length_mm: f64,
    /// Flat depth D_w = L_w^2 / (16 R_w), mm (0 for polygonization).
    pub flat_depth_mm: f64,
    /// Irregularity level per harmonic order 1..=20, dB re 1 µm.
    pub poly_levels_db: Vec<f64>,
    /// Phase per harmonic order, radians in [0, 2π).
    pub poly_phases: Vec<f64>,
    pub wheel_radius_mm: f64,
    /// Rolling coordinate of the wheel at track coordinate 0, mm.
    pub roll_offset_mm: f64,
}

impl WheelDefect {
    pub fn flat(site: DefectSite, length_mm: f64, radius_mm: f64, roll_offset_mm: f64) -> Result<Self> {
        let depth = flat_depth(length_mm, radius_mm)?;
        if length_mm > TAU * radius_mm {
            return Err(Error::domain("flat longer than the wheel circumference"));
        }
        Ok(WheelDefect {
            kind: DefectKind::Flat,
            wagon_index: site.wagon_index,
            wheel_position: site.wheel_position,
            flat_length_mm: length_mm,
            flat_depth_mm: depth,
            poly_levels_db: Vec::new(),
            poly_phases: Vec::new(),
            wheel_radius_mm: radius_mm,
            roll_offset_mm,
        })
    }

    pub fn polygonization(
        site: DefectSite,
        levels_db: Vec<f64>,
        phases: Vec<f64>,
        radius_mm: f64,
        roll_offset_mm: f64,
    ) -> Result<Self> {
        if radius_mm <= 0.0 {
            return Err(Error::domain("wheel radius must be positive"));
        }
        if levels_db.len() != HARMONICS || phases.len() != HARMONICS {
            return Err(Error::domain(format!("polygonization needs {HARMONICS} levels and phases")));
        }
        if levels_db.iter().any(|l| !l.is_finite() && *l != f64::NEG_INFINITY) {
            return Err(Error::domain("harmonic levels must be finite or -inf"));
        }
        if phases.iter().any(|p| !(0.0..TAU).contains(p)) {
            return Err(Error::domain("phases must lie in [0, 2π)"));
        }
        Ok(WheelDefect {
            kind: DefectKind::Polygonization,
            wagon_index: site.wagon_index,
            wheel_position: site.wheel_position,
            flat_length_mm: 0.0,
            flat_depth_mm: 0.0,
            poly_levels_db: levels_db,
            poly_phases: phases,
            wheel_radius_mm: radius_mm,
            roll_offset_mm,
        })
    }

    pub fn site(&self) -> DefectSite {
        DefectSite { wagon_index: self.wagon_index, wheel_position: self.wheel_position }
    }

    pub fn circumference_mm(&self) -> f64 {
        TAU * self.wheel_radius_mm
    }

    /// Sine amplitudes A_θ in µm, θ = 1..=20.
    pub fn poly_amplitudes_um(&self) -> Vec<f64> {
        self.poly_levels_db.iter().map(|&l| poly_amplitude(l)).collect()
    }

    /// Second derivative of the polygonal profile w.r.t. the rolling
    /// coordinate, in 1/m (profile in m, coordinate in m).
    pub fn poly_curvature_per_m(&self, x_mm: f64) -> f64 {
        let r = self.wheel_radius_mm;
        self.poly_amplitudes_um()
            .iter()
            .zip(&self.poly_phases)
            .enumerate()
            .map(|(i, (&a_um, &phi))| {
                let k = TAU / (TAU * r / (i + 1) as f64); // 1/mm
                let k_m = k * 1e3;
                -(a_um * 1e-6) * k_m * k_m * (k * x_mm + phi).sin()
            })
            .sum()
    }

    /// Peak |w| of the polygonal profile over one circumference, mm.
    pub fn poly_peak_mm(&self) -> f64 {
        let c = self.circumference_mm();
        let n = 4096;
        (0..n)
            .map(|i| poly_profile_unchecked(c * i as f64 / n as f64, self).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefectRecord {
    kind: DefectKind,
    wagon_index: usize,
    wheel_position: WheelPosition,
    #[serde(default)]
    flat_length_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flat_depth_mm: Option<f64>,
    #[serde(default)]
    poly_levels_db: Vec<f64>,
    #[serde(default)]
    poly_phases: Vec<f64>,
    #[serde(default = "default_radius")]
    wheel_radius_mm: f64,
    #[serde(default)]
    roll_offset_mm: f64,
}

fn default_radius() -> f64 {
    DEFAULT_WHEEL_RADIUS_MM
}

impl TryFrom<DefectRecord> for WheelDefect {
    type Error = Error;

    fn try_from(r: DefectRecord) -> Result<Self> {
        let site = DefectSite { wagon_index: r.wagon_index, wheel_position: r.wheel_position };
        let d = match r.kind {
            DefectKind::Flat => WheelDefect::flat(site, r.flat_length_mm, r.wheel_radius_mm, r.roll_offset_mm)?,
            DefectKind::Polygonization => WheelDefect::polygonization(
                site,
                r.poly_levels_db,
                r.poly_phases,
                r.wheel_radius_mm,
                r.roll_offset_mm,
            )?,
        };
        if let Some(depth) = r.flat_depth_mm {
            if depth != d.flat_depth_mm {
                return Err(Error::domain(format!(
                    "flat depth {depth} disagrees with L^2/(16R) = {}",
                    d.flat_depth_mm
                )));
            }
        }
        Ok(d)
    }
}

impl From<WheelDefect> for DefectRecord {
    fn from(d: WheelDefect) -> Self {
        DefectRecord {
            kind: d.kind,
            wagon_index: d.wagon_index,
            wheel_position: d.wheel_position,
            flat_length_mm: d.flat_length_mm,
            flat_depth_mm: (d.kind == DefectKind::Flat).then_some(d.flat_depth_mm),
            poly_levels_db: d.poly_levels_db,
            poly_phases: d.poly_phases,
            wheel_radius_mm: d.wheel_radius_mm,
            roll_offset_mm: d.roll_offset_mm,
        }
    }
}

/// Depth of a wheel flat of chord length `length_mm` on a wheel of radius
/// `radius_mm`: D = L² / (16 R).
pub fn flat_depth(length_mm: f64, radius_mm: f64) -> Result<f64> {
    if !(length_mm > 0.0) || !(radius_mm > 0.0) || !length_mm.is_finite() || !radius_mm.is_finite() {
        return Err(Error::domain(format!(
            "flat depth needs positive length and radius, got L={length_mm}, R={radius_mm}"
        )));
    }
    Ok(length_mm * length_mm / (16.0 * radius_mm))
}

/// Vertical profile deviation of a wheel flat at rolling coordinate `x_mm`.
///
/// The flat occupies the last `length_mm` of the circumference. The cosine is
/// evaluated in the window-local coordinate so the profile is continuous:
/// zero at both window edges, `-D` at the window centre.
pub fn flat_profile(x_mm: f64, length_mm: f64, radius_mm: f64) -> Result<f64> {
    let depth = flat_depth(length_mm, radius_mm)?;
    let circumference = TAU * radius_mm;
    if !(0.0..=circumference).contains(&x_mm) {
        return Err(Error::domain(format!(
            "x = {x_mm} mm outside one circumference [0, {circumference}]"
        )));
    }
    Ok(flat_profile_unchecked(x_mm, length_mm, depth, circumference))
}

pub(crate) fn flat_profile_unchecked(x_mm: f64, length_mm: f64, depth_mm: f64, circumference_mm: f64) -> f64 {
    let start = circumference_mm - length_mm;
    if x_mm < start {
        return 0.0;
    }
    let local = x_mm - start;
    -(depth_mm / 2.0) * (1.0 - (TAU * local / length_mm).cos())
}

/// Wavelength of harmonic order `theta` on a wheel of radius `radius_mm`.
pub fn poly_wavelength(theta: u32, radius_mm: f64) -> Result<f64> {
    if theta < 1 {
        return Err(Error::domain("harmonic order must be >= 1"));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::domain("wheel radius must be positive"));
    }
    Ok(TAU * radius_mm / f64::from(theta))
}

/// Sine amplitude in µm for an irregularity level in dB re 1 µm.
pub fn poly_amplitude(level_db: f64) -> f64 {
    std::f64::consts::SQRT_2 * 10f64.powf(level_db / 20.0)
}

/// Polygonal profile deviation at rolling coordinate `x_mm`, in mm.
pub fn poly_profile(x_mm: f64, defect: &WheelDefect) -> Result<f64> {
    if defect.kind != DefectKind::Polygonization {
        return Err(Error::domain("poly_profile needs a polygonization defect"));
    }
    Ok(poly_profile_unchecked(x_mm, defect))
}

fn poly_profile_unchecked(x_mm: f64, defect: &WheelDefect) -> f64 {
    defect
        .poly_levels_db
        .iter()
        .zip(&defect.poly_phases)
        .enumerate()
        .map(|(i, (&level, &phi))| {
            let lambda = TAU * defect.wheel_radius_mm / (i + 1) as f64;
            poly_amplitude(level) * 1e-3 * (TAU / lambda * x_mm + phi).sin()
        })
        .sum()
}

/// Draw a defect at its default site on a wheel of the default radius.
pub fn sample_defect(kind: DefectKind, severity: (f64, f64), rng: &mut Rng) -> Result<WheelDefect> {
    sample_defect_at(kind, severity, DefectSite::default_for(kind), DEFAULT_WHEEL_RADIUS_MM, rng)
}

/// Draw a defect.
///
/// For flats `severity` is the flat-length interval in mm (L1, L2 or any
/// sub-interval of 10..100 mm). For polygonization it is the interval of the
/// peak profile amplitude in mm (within 0.25..1.2 mm): the harmonic shape is
/// drawn with orders 6-8 dominant and random phases, then scaled so the peak
/// deviation equals a uniform draw from the interval.
pub fn sample_defect_at(
    kind: DefectKind,
    severity: (f64, f64),
    site: DefectSite,
    radius_mm: f64,
    rng: &mut Rng,
) -> Result<WheelDefect> {
    let (lo, hi) = severity;
    let bounds = match kind {
        DefectKind::Flat => FLAT_BOUNDS,
        DefectKind::Polygonization => POLY_BOUNDS,
    };
    if !(lo <= hi) || lo < bounds.0 || hi > bounds.1 {
        return Err(Error::domain(format!(
            "severity interval [{lo}, {hi}] outside [{}, {}] for {kind:?}",
            bounds.0, bounds.1
        )));
    }
    let circumference = TAU * radius_mm;
    match kind {
        DefectKind::Flat => {
            let length = uniform(rng, lo, hi);
            let offset = rng.random_range(0.0..circumference);
            WheelDefect::flat(site, length, radius_mm, offset)
        }
        DefectKind::Polygonization => {
            let target = uniform(rng, lo, hi);
            let mut levels = Vec::with_capacity(HARMONICS);
            for theta in 1..=HARMONICS {
                let level = if (6..=8).contains(&theta) {
                    uniform(rng, -1.0, 1.0)
                } else {
                    let dist = if theta < 6 { 6 - theta } else { theta - 8 } as f64;
                    -8.0 - 1.5 * dist + uniform(rng, -2.0, 2.0)
                };
                levels.push(level);
            }
            let phases = (0..HARMONICS).map(|_| uniform_phase(rng)).collect();
            let offset = rng.random_range(0.0..circumference);
            let mut defect = WheelDefect::polygonization(site, levels, phases, radius_mm, offset)?;
            let peak = defect.poly_peak_mm();
            let gain_db = 20.0 * (target / peak).log10();
            for l in &mut defect.poly_levels_db {
                *l += gain_db;
            }
            Ok(defect)
        }
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub(crate) fn uniform_phase(rng: &mut Rng) -> f64 {
    let p: f64 = rng.random_range(0.0..TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use approx::assert_relative_eq;

    #[test]
    fn flat_depth_examples() {
        assert_relative_eq!(flat_depth(50.0, 500.0).unwrap(), 0.3125, max_relative = 1e-15);
        assert_relative_eq!(flat_depth(100.0, 500.0).unwrap(), 1.25, max_relative = 1e-15);
        assert!(flat_depth(1e-9, 500.0).unwrap() < 1e-18);
        assert!(flat_depth(0.0, 500.0).is_err());
        assert!(flat_depth(10.0, -1.0).is_err());
    }

    #[test]
    fn flat_depth_is_monotone_on_grid() {
        let lengths: Vec<f64> = (1..=40).map(|i| i as f64 * 2.5).collect();
        let radii: Vec<f64> = (0..20).map(|i| 300.0 + i as f64 * 25.0).collect();
        for &r in &radii {
            for w in lengths.windows(2) {
                assert!(flat_depth(w[1], r).unwrap() > flat_depth(w[0], r).unwrap());
            }
        }
        for &l in &lengths {
            for w in radii.windows(2) {
                assert!(flat_depth(l, w[1]).unwrap() < flat_depth(l, w[0]).unwrap());
            }
        }
    }

    #[test]
    fn flat_profile_window() {
        let (l, r) = (50.0, 460.0);
        let c = TAU * r;
        let d = flat_depth(l, r).unwrap();
        assert_eq!(flat_profile(0.0, l, r).unwrap(), 0.0);
        assert_relative_eq!(flat_profile(c - l / 2.0, l, r).unwrap(), -d, max_relative = 1e-12);
        assert_eq!(flat_profile(c - l, l, r).unwrap(), 0.0);
        assert!(flat_profile(c, l, r).unwrap().abs() < 1e-15);
        assert!(flat_profile(-1.0, l, r).is_err());
        assert!(flat_profile(c + 1.0, l, r).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn wavelength_and_amplitude_examples() {
        assert_relative_eq!(poly_wavelength(1, 500.0).unwrap(), 3141.592653589793, max_relative = 1e-14);
        assert_relative_eq!(poly_wavelength(2, 500.0).unwrap(), 1570.7963267948965, max_relative = 1e-14);
        assert!((poly_wavelength(8, 460.0).unwrap() - 361.28).abs() < 5e-3);
        assert!(poly_wavelength(0, 460.0).is_err());
        assert_relative_eq!(poly_amplitude(0.0), 1.41421356, max_relative = 1e-8);
        assert_relative_eq!(poly_amplitude(20.0), 14.1421356, max_relative = 1e-8);
        assert_relative_eq!(poly_amplitude(-20.0), 0.141421356, max_relative = 1e-8);
    }

    fn single_harmonic(theta: usize, amplitude_um: f64, phase: f64) -> WheelDefect {
        let mut levels = vec![f64::NEG_INFINITY; HARMONICS];
        let mut phases = vec![0.0; HARMONICS];
        levels[theta - 1] = 20.0 * (amplitude_um / std::f64::consts::SQRT_2).log10();
        phases[theta - 1] = phase;
        WheelDefect::polygonization(DefectSite::POLY, levels, phases, 460.0, 0.0).unwrap()
    }

    #[test]
    fn poly_profile_examples() {
        let zero = WheelDefect::polygonization(
            DefectSite::POLY,
            vec![f64::NEG_INFINITY; HARMONICS],
            vec![0.0; HARMONICS],
            460.0,
            0.0,
        )
        .unwrap();
        for x in [0.0, 100.0, 1234.5] {
            assert_eq!(poly_profile(x, &zero).unwrap(), 0.0);
        }
        let d = single_harmonic(6, 1.0, 0.0);
        assert_eq!(poly_profile(0.0, &d).unwrap(), 0.0);
        let quarter = poly_wavelength(6, 460.0).unwrap() / 4.0;
        assert_relative_eq!(poly_profile(quarter, &d).unwrap(), 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn poly_profile_matches_single_sine() {
        for theta in [1usize, 6, 13, 20] {
            let d = single_harmonic(theta, 37.0, 1.1);
            let lambda = poly_wavelength(theta as u32, 460.0).unwrap();
            for i in 0..50 {
                let x = i as f64 * 41.3;
                let expect = 37.0e-3 * (TAU / lambda * x + 1.1).sin();
                assert!((poly_profile(x, &d).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_sampling_stays_in_interval() {
        let mut rng = rng_from(11);
        for _ in 0..2000 {
            let d = sample_defect(DefectKind::Flat, FLAT_L1, &mut rng).unwrap();
            assert!((25.0..=50.0).contains(&d.flat_length_mm));
            assert_eq!(d.flat_depth_mm, flat_depth(d.flat_length_mm, 460.0).unwrap());
            let d500 = flat_depth(d.flat_length_mm, 500.0).unwrap();
            assert!((0.078..=0.3125).contains(&d500));
        }
        assert!(sample_defect(DefectKind::Flat, (5.0, 50.0), &mut rng).is_err());
        assert!(sample_defect(DefectKind::Flat, (50.0, 150.0), &mut rng).is_err());
        assert!(sample_defect(DefectKind::Polygonization, (0.8, 2.0), &mut rng).is_err());
    }

    #[test]
    fn polygonization_sampling_hits_target_and_keeps_6_to_8_dominant() {
        let mut rng = rng_from(5);
        for _ in 0..50 {
            let d = sample_defect(DefectKind::Polygonization, POLY_SEVERITY, &mut rng).unwrap();
            let peak = d.poly_peak_mm();
            assert!((0.8 - 1e-9..=1.2 + 1e-9).contains(&peak), "peak {peak}");
            let amps = d.poly_amplitudes_um();
            let dominant = amps[5..8].iter().cloned().fold(f64::INFINITY, f64::min);
            let others = amps
                .iter()
                .enumerate()
                .filter(|(i, _)| !(5..8).contains(i))
                .map(|(_, a)| *a)
                .fold(0.0, f64::max);
            assert!(dominant > others);
            assert!(d.poly_phases.iter().all(|p| (0.0..TAU).contains(p)));
        }
    }

    #[test]
    fn phase_draws_pass_ks_uniformity() {
        let mut rng = rng_from(2024);
        let mut draws: Vec<f64> = (0..10_000).map(|_| uniform_phase(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = x / TAU;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic KS critical value at alpha = 0.01.
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn defect_deserialization_validates() {
        let ok = r#"{"kind":"flat","wagon_index":2,"wheel_position":{"axle_in_wagon":0,"side":"left"},"flat_length_mm":40.0}"#;
        let d: WheelDefect = serde_json::from_str(ok).unwrap();
        assert_eq!(d.flat_depth_mm, flat_depth(40.0, 460.0).unwrap());
        let bad = r#"{"kind":"flat","wagon_index":2,"wheel_position":{"axle_in_wagon":0,"side":"left"},"flat_length_mm":40.0,"flat_depth_mm":1.0}"#;
        assert!(serde_json::from_str::<WheelDefect>(bad).is_err());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<WheelDefect>(&json).unwrap(), d);
    }
}
