//! Evaluation harness for trajectory prediction on estimated object tracks.
//!
//! The pipeline runs ingestion (KITTI tracking labels or estimator pose
//! files) into canonical planar tracks, optional EKF smoothing, smoothness
//! diagnostics, eligibility windowing, kinematic baseline prediction under
//! turn-rate/acceleration limits, and scoring with ADE/FDE/ACE plus RPE for
//! pose estimates. A seeded synthetic generator makes the noise-sensitivity
//! behaviour testable without external datasets.

pub mod diagnostics;
pub mod error;
pub mod geom;
pub mod ingest;
pub mod metrics;
pub mod predictors;
pub mod smoothing;
pub mod synth;
pub mod track;
pub mod windowing;

pub use error::{Error, Result};
pub use geom::{recover_pose, recover_track, AxisConvention, Motion3, Pose2, Pose3};
pub use track::{AgentState2, FrameClock, SourceTag, Track, TrackSegment};
pub use windowing::{PredictionInstance, WindowSpec};
