//! Accelerometer window embeddings.
//!
//! A passage's acceleration trace is resampled to a fixed-length, z-normalized
//! [`SignalWindow`]. A small variational autoencoder maps windows to a
//! 40-dimensional [`Embedding`] (posterior mean and log-variance). A
//! handcrafted statistical feature set serves as the baseline.

mod features;
mod vae;

pub use features::{handcrafted_features, HandcraftedConfig};
pub use vae::{
    gradient_check, kl_divergence, vae_random_search, EpochLoss, LossParts, Optimizer, Vae, VaeConfig,
    VaeSearchTrial,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 1024;

/// Fixed-length, z-normalized signal window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    pub values: Vec<f64>,
    /// Mean and standard deviation removed during normalization.
    pub mean: f64,
    pub std: f64,
}

impl SignalWindow {
    /// Resample `signal` to `len` samples and z-normalize. A constant signal
    /// becomes all zeros with `std = 0`.
    pub fn from_signal(signal: &[f64], len: usize) -> Result<Self> {
        if signal.len() < 2 || len < 2 {
            return Err(Error::domain("window needs at least two input and output samples"));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sample in signal".into()));
        }
        let resampled = resample(signal, len);
        let n = len as f64;
        let mean = resampled.iter().sum::<f64>() / n;
        let var = resampled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let values = if std > 0.0 {
            resampled.iter().map(|v| (v - mean) / std).collect()
        } else {
            vec![0.0; len]
        };
        Ok(SignalWindow { values, mean, std })
    }

    /// Wrap already prepared values without normalization.
    pub fn raw(values: Vec<f64>) -> Self {
        SignalWindow { values, mean: 0.0, std: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Boxcar anti-alias filter (when shrinking) followed by linear
/// interpolation onto `len` evenly spaced points spanning the input.
pub fn resample(x: &[f64], len: usize) -> Vec<f64> {
    let ratio = x.len() as f64 / len as f64;
    let filtered: Vec<f64> = if ratio > 1.0 {
        let half = (ratio / 2.0).floor() as usize;
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
    } else {
        x.to_vec()
    };
    let step = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let pos = i as f64 * step;
            let k = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - k as f64;
            filtered[k] * (1.0 - frac) + filtered[k + 1] * frac
        })
        .collect()
}

/// Posterior summary of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Embedding {
    /// `mu` followed by `logvar`.
    pub fn fused_view(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.logvar);
        v
    }

    pub fn dim(&self) -> usize {
        self.mu.len() + self.logvar.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn resample_keeps_endpoints_and_lines() {
        let ramp: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let r = resample(&ramp, 1024);
        assert_eq!(r.len(), 1024);
        let up: Vec<f64> = (0..100).map(|i| 2.0 * i as f64).collect();
        let r = resample(&up, 199);
        for (i, v) in r.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_signal_gives_zero_window() {
        let w = SignalWindow::from_signal(&[3.0; 50], 32).unwrap();
        assert_eq!(w.values, vec![0.0; 32]);
        assert_eq!(w.std, 0.0);
        assert_eq!(w.mean, 3.0);
    }

    proptest! {
        #[test]
        fn windows_are_normalized(x in prop::collection::vec(-100.0f64..100.0, 10..5000), len in 16usize..2048) {
            let w = SignalWindow::from_signal(&x, len).unwrap();
            prop_assume!(w.std > 1e-6);
            let n = len as f64;
            let mean = w.values.iter().sum::<f64>() / n;
            let std = (w.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert_eq!(w.len(), len);
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}
