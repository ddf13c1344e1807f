//! Vertical track irregularity profiles.
//!
//! The profile is synthesized in the wavenumber domain: random Gaussian
//! coefficients on the bins inside the wavelength band, a spectral slope that
//! favours long wavelengths, a Hermitian-symmetric inverse FFT, and a final
//! gain that sets the peak deviation to the requested amplitude bound.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrregularityConfig {
    pub length_m: f64,
    /// Shortest and longest wavelength in metres.
    pub wavelength_band_m: (f64, f64),
    /// Peak absolute deviation in mm.
    pub amplitude_mm: f64,
    pub dx_mm: f64,
}

impl Default for IrregularityConfig {
    fn default() -> Self {
        IrregularityConfig {
            length_m: 100.0,
            wavelength_band_m: (1.0, 30.0),
            amplitude_mm: 2.0,
            dx_mm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackProfile {
    pub dx_m: f64,
    /// Vertical deviation in mm at `i * dx_m`.
    pub values_mm: Vec<f64>,
}

impl TrackProfile {
    pub fn len_m(&self) -> f64 {
        self.values_mm.len() as f64 * self.dx_m
    }

    /// Second derivative along the track in 1/m (deviation in m), by
    /// central differences.
    pub fn curvature_per_m(&self) -> Vec<f64> {
        let n = self.values_mm.len();
        let mut out = vec![0.0; n];
        let h2 = self.dx_m * self.dx_m;
        for i in 1..n.saturating_sub(1) {
            let v = &self.values_mm;
            out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * 1e-3 / h2;
        }
        if n >= 3 {
            out[0] = out[1];
            out[n - 1] = out[n - 2];
        }
        out
    }
}

pub fn gen_track_irregularity(seed: u64, cfg: &IrregularityConfig) -> Result<TrackProfile> {
    if !(cfg.length_m > 0.0) || !(cfg.dx_mm > 0.0) {
        return Err(Error::domain("profile length and spacing must be positive"));
    }
    let (short, long) = cfg.wavelength_band_m;
    if !(short > 0.0) || !(short < long) {
        return Err(Error::domain(format!("empty wavelength band [{short}, {long}]")));
    }
    let dx_m = cfg.dx_mm * 1e-3;
    let n = (cfg.length_m / dx_m).round() as usize;
    if n < 4 {
        return Err(Error::domain("profile too short"));
    }
    let df = 1.0 / (n as f64 * dx_m);
    let (f_lo, f_hi) = (1.0 / long, 1.0 / short);
    let bins: Vec<usize> = (1..=n / 2)
        .filter(|&k| {
            let f = k as f64 * df;
            f >= f_lo && f <= f_hi && !(n.is_multiple_of(2) && k == n / 2)
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::domain("no frequency bins inside the wavelength band"));
    }
    if cfg.amplitude_mm == 0.0 {
        return Ok(TrackProfile { dx_m, values_mm: vec![0.0; n] });
    }

    let mut rng = rng_from(seed);
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    for &k in &bins {
        let f = k as f64 * df;
        let slope = (f_lo / f).powf(1.5);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spectrum[k] = Complex::new(re * slope, im * slope);
        spectrum[n - k] = spectrum[k].conj();
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let mut values: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = cfg.amplitude_mm / peak;
    for v in &mut values {
        *v *= gain;
    }
    Ok(TrackProfile { dx_m, values_mm: values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> IrregularityConfig {
        IrregularityConfig { length_m: 60.0, dx_mm: 5.0, ..Default::default() }
    }

    #[test]
    fn default_profile_shape() {
        let p = gen_track_irregularity(3, &IrregularityConfig::default()).unwrap();
        assert_eq!(p.values_mm.len(), 100_000);
        let peak = p.values_mm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 2.0 + 1e-12);
        assert!(peak > 1.99);
    }

    #[test]
    fn zero_amplitude_gives_flat_track() {
        let cfg = IrregularityConfig { amplitude_mm: 0.0, ..small() };
        let p = gen_track_irregularity(1, &cfg).unwrap();
        assert!(p.values_mm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_track_irregularity(9, &small()).unwrap();
        let b = gen_track_irregularity(9, &small()).unwrap();
        let c = gen_track_irregularity(10, &small()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn energy_is_inside_band() {
        let cfg = IrregularityConfig::default();
        let p = gen_track_irregularity(77, &cfg).unwrap();
        let n = p.values_mm.len();
        let mut buf: Vec<Complex<f64>> = p.values_mm.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let df = 1.0 / (n as f64 * p.dx_m);
        let (mut inside, mut total) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
            let e = c.norm_sqr();
            let f = k as f64 * df;
            total += e;
            if (1.0 / 30.0 - 1e-12..=1.0 + 1e-12).contains(&f) {
                inside += e;
            }
        }
        assert!(inside / total >= 0.99, "in-band fraction {}", inside / total);
    }

    #[test]
    fn empty_band_is_rejected() {
        let cfg = IrregularityConfig { wavelength_band_m: (5.0, 5.0), ..small() };
        assert!(gen_track_irregularity(1, &cfg).is_err());
        let cfg = IrregularityConfig { wavelength_band_m: (30.0, 1.0), ..small() };
        assert!(gen_track_irregularity(1, &cfg).is_err());
        let cfg = IrregularityConfig { length_m: 0.0, ..small() };
        assert!(gen_track_irregularity(1, &cfg).is_err());
    }
}
