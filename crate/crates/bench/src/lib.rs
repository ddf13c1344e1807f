//! Shared fixtures for the criterion benches.

use wayside_core::clf::GbdtModel;
use wayside_core::embed::{SignalWindow, Vae};
use wayside_core::fuse::{accel_windows, build_dataset, Dataset, FuseConfig, FusionStrategy, StrategyCode};
use wayside_core::peaks::{Detector, PeakConfig};
use wayside_core::synth::{sample_passages, synthesize_passage, PassageSpec, SamplingSpec, WaysideRecording};
use wayside_core::{GbdtConfig, VaeConfig};

pub const SEED: u64 = 7;

pub fn passage_specs(n: usize) -> Vec<PassageSpec> {
    sample_passages(&SamplingSpec::default(), n, SEED).expect("default sampling is valid")
}

pub fn recordings(n: usize) -> Vec<WaysideRecording> {
    passage_specs(n).iter().map(|s| synthesize_passage(s).expect("sampled passages synthesize")).collect()
}

pub fn windows(recs: &[WaysideRecording]) -> Vec<SignalWindow> {
    accel_windows(recs, FuseConfig::default().window_len).expect("recordings are long enough")
}

/// Encoder trained for a handful of epochs; weights matter little for timing.
pub fn small_vae(windows: &[SignalWindow]) -> Vae {
    Vae::train(VaeConfig { epochs: 3, seed: SEED, ..VaeConfig::default() }, windows).expect("training succeeds")
}

pub fn dataset(recs: &[WaysideRecording]) -> Dataset {
    build_dataset(recs, FusionStrategy::new(StrategyCode::IWd, true), Detector::Sd, 0.5, None, &PeakConfig::default(), &FuseConfig::default())
        .expect("non-embedding strategies need no encoder")
}

pub fn model(ds: &Dataset) -> GbdtModel {
    let y: Vec<f64> = ds.labels();
    wayside_core::clf::train_gbdt(&ds.matrix(), &y, None, &GbdtConfig::default()).expect("both classes present")
}
