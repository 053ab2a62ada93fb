//! Strapdown INS/DVL navigation with an error-state Kalman filter whose
//! process noise is tuned online, either from innovations or by a
//! tree-ensemble model over windowed IMU features.

// `!(x > 0.0)` is used on purpose so NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod adapt;
pub mod datagen;
pub mod error;
pub mod eskf;
pub mod features;
pub mod harness;
pub mod nav;
pub mod par;
pub mod trajectory;
pub mod trees;

pub use adapt::{QAdapter, QStrategy, StrategySpec};
pub use error::{Error, Result};
pub use eskf::{DvlMeasurement, ErrorFilterState, ProcessNoiseSpec};
pub use features::{extract_features, Channel, FeatureVector, Window};
pub use nav::{ImuSample, NavState, Strapdown};
pub use par::Exec;
pub use trajectory::{AnalyticTrajectory, TrajectoryId};
pub use trees::{EnsembleParams, TreeEnsemble};
