//! Gaze-based attention classification for human-robot collaboration.
//!
//! The pipeline crops faces, trains a gaze regressor, transfers its
//! backbone into a three-class attention classifier (cobot, table,
//! distracted), evaluates it with leave-one-subject-out cross-validation and
//! drives a smoothed, hysteresis-guarded pacing policy at run time.

pub mod datasets;
pub mod eval;
pub mod model;
pub mod nn;
pub mod runtime;
pub mod types;
pub mod vision;

pub use types::{AttentionClass, ClassProbabilities, GazeDirection, ValueError};
