//! Synthetic wayside recordings.
//!
//! A passage is described by a [`PassageSpec`] and rendered by
//! [`synthesize_passage`] into a strain channel (one bell-shaped pulse per
//! axle) and an accelerometer channel (track irregularity response plus wheel
//! defect signatures). The analytical surrogate stands in for a full
//! train-track finite element co-simulation; it keeps the properties the
//! downstream pipeline depends on: controllable peak structure, load and
//! speed dependence, and defect signatures derived from the flat and
//! polygonization profiles in [`defect`].

pub mod defect;
pub mod io;
pub mod irregularity;
pub mod passage;
pub mod sample;
pub mod train;

pub use defect::{
    flat_depth, flat_profile, poly_amplitude, poly_profile, poly_wavelength, sample_defect,
    sample_defect_at, DefectKind, DefectSite, Side, WheelDefect, WheelPosition, FLAT_L1, FLAT_L2,
    POLY_SEVERITY,
};
pub use irregularity::{gen_track_irregularity, IrregularityConfig, TrackProfile};
pub use passage::{synthesize_passage, synthesize_with, PassageSpec, SurrogateModel, WaysideRecording};
pub use sample::{sample_passage, sample_passages, AnomalyType, SamplingSpec};
pub use train::{LoadScheme, TrainKind, TrainType};
