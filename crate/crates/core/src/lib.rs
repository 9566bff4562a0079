//! Path-level channel digital twin: geometry, synthetic SRS channels, path
//! extraction, tracking and per-path evolution.

pub mod chan;
pub mod error;
pub mod evolve;
pub mod extract;
pub mod geom;
pub mod harness;
pub mod mobility;
pub mod scene;
pub mod tracker;
pub mod twin;

pub use chan::{ArrayConfig, GridConfig, Measurement, Noise, Ray};
pub use error::{PemError, Result};
pub use evolve::{Evolver, KalmanConfig, PredictorKind, RecurrentPredictor};
pub use extract::{ExtractConfig, Extractor, PathFeature};
pub use geom::{Vec3, SPEED_OF_LIGHT};
pub use mobility::{generate_trajectory, AccelProfile, MotionParams, Trajectory};
pub use scene::{Building, GeoPath, PathKind, Scene};
pub use tracker::{TrackSet, TrackerConfig};
pub use twin::{Report, ToyCkm};
