use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::SignalWindow;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandcraftedConfig {
    /// Number of dominant frequency bins reported.
    pub top_k: usize,
    /// Number of leading FFT magnitudes reported.
    pub fft_components: usize,
}

impl Default for HandcraftedConfig {
    fn default() -> Self {
        HandcraftedConfig { top_k: 3, fft_components: 16 }
    }
}

impl HandcraftedConfig {
    pub fn len(&self) -> usize {
        6 + self.top_k + self.fft_components
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `[mean, std, range, skewness, excess kurtosis, spectral energy,
/// top-k dominant bins, first-m FFT magnitudes]`. Skewness and kurtosis are
/// 0 for a constant window. Bins exclude DC and are sorted by magnitude.
pub fn handcrafted_features(x: &SignalWindow, cfg: &HandcraftedConfig) -> Result<Vec<f64>> {
    let v = &x.values;
    if v.is_empty() {
        return Err(Error::domain("empty window"));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|a| (a - mean).powi(3)).sum::<f64>() / n;
    let m4 = v.iter().map(|a| (a - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };

    let mut spectrum: Vec<Complex<f64>> = v.iter().map(|&a| Complex::new(a, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(spectrum.len()).process(&mut spectrum);
    let half = v.len() / 2 + 1;
    let mags: Vec<f64> = spectrum[..half].iter().map(|c| c.norm()).collect();
    let energy = spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;

    let mut bins: Vec<usize> = (1..half).collect();
    bins.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    let mut out = vec![mean, std, hi - lo, skew, kurt, energy];
    out.extend((0..cfg.top_k).map(|i| bins.get(i).map_or(0.0, |&b| b as f64)));
    out.extend((0..cfg.fft_components).map(|i| mags.get(i).copied().unwrap_or(0.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_window() {
        let f = handcrafted_features(&SignalWindow::raw(vec![2.5; 64]), &HandcraftedConfig::default()).unwrap();
        assert_eq!(f.len(), 25);
        assert_eq!(&f[..5], &[2.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sine_dominant_bin() {
        let x: Vec<f64> = (0..256).map(|i| (std::f64::consts::TAU * 11.0 * i as f64 / 256.0).sin()).collect();
        let f = handcrafted_features(&SignalWindow::raw(x), &HandcraftedConfig::default()).unwrap();
        assert_eq!(f[6], 11.0);
    }

    #[test]
    fn symmetric_window_has_zero_skew() {
        let x: Vec<f64> = (0..101).map(|i| ((i as f64 - 50.0) / 7.0).powi(3)).collect();
        let f = handcrafted_features(&SignalWindow::raw(x), &HandcraftedConfig::default()).unwrap();
        assert!(f[3].abs() < 1e-9);
        assert!(handcrafted_features(&SignalWindow::raw(vec![]), &HandcraftedConfig::default()).is_err());
    }

    #[test]
    fn energy_obeys_parseval() {
        let x: Vec<f64> = (0..128).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let f = handcrafted_features(&SignalWindow::raw(x.clone()), &HandcraftedConfig::default()).unwrap();
        let direct: f64 = x.iter().map(|v| v * v).sum();
        assert!((f[5] - direct).abs() < 1e-9 * direct);
    }
}
