//! Wayside railway monitoring pipeline.
//!
//! The crate covers the whole chain from a simulated train passage to a
//! continually trained wheel-fault classifier:
//!
//! * [`synth`] generates strain and acceleration recordings of train passages
//!   with seeded wheel flats and polygonization.
//! * [`peaks`] counts axles with four peak detectors and extracts axle
//!   semantics (count, timing, deformation).
//! * [`embed`] trains a small variational autoencoder on accelerometer
//!   windows and computes a handcrafted statistical baseline.
//! * [`fuse`] assembles classifier inputs for the fusion strategies.
//! * [`clf`] is a gradient-boosted tree classifier with random-search tuning.
//! * [`replay`] runs the domain-incremental stream with experience replay and
//!   computes the transfer metrics.
//! * [`stats`] holds the Friedman / Shaffer machinery.
//! * [`experiment`] wires everything into reproducible experiment grids.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clf;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod fuse;
pub mod peaks;
pub mod replay;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

pub use clf::{GbdtConfig, GbdtModel};
pub use embed::{Embedding, SignalWindow, Vae, VaeConfig};
pub use fuse::{Dataset, FeatureVector, FusionStrategy, StrategyCode};
pub use peaks::{Detector, PeakSet, SemanticFeatures};
pub use replay::{PerformanceMatrix, ReplayStrategy};
pub use synth::{LoadScheme, PassageSpec, TrainKind, TrainType, WaysideRecording, WheelDefect};
