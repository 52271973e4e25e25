//! Target tracking on event-camera streams: segmentation, rate coding,
//! convolutional features and correlation filters.

// `!(x >= 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cf;
pub mod eval;
pub mod event;
pub mod features;
pub mod fft2;
pub mod grid;
pub mod rate;
pub mod segment;
pub mod synth;
pub mod tracker;

pub use cf::{CfError, CfParams, FilterModel, LayerFilter, ResponseMap};
pub use eval::{bench, center_location_error, centroid_tracker, BenchConfig, CleReport, EvalError};
pub use event::{BBox, Event, EventError, EventStream, GroundTruthEntry, Polarity, SensorGeometry};
pub use features::{load_network, write_network, FeatureStack, NetworkError, NetworkSpec};
pub use grid::Grid;
pub use rate::{encode, to_input, PolarityMode, RateMap};
pub use segment::{segment, EventSegment, SegmentError, SegmentationPolicy};
pub use synth::{generate_scene, Preset, SceneSpec};
pub use tracker::{track, TrackError, TrackParams, TrackPoint, Tracker};
