//! Ground-truth test analysis for ultrasonic parking-space detections.
//!
//! A drive is ingested into a [`model::DriveBundle`]; every detection's raw
//! space is located in the video by integrating odometry
//! ([`kinematics`]), its frames are scored ([`classifier`]) and fused into a
//! final label ([`decision`]). [`metrics`] turns labels and truth into
//! confusion tables, KPI views, effort estimates and threshold sweeps.
//! [`scenario`] generates synthetic drives with geometric truth.

pub mod classifier;
pub mod decision;
pub mod error;
pub mod ingest;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod scenario;

pub use error::Error;
pub use par::Execution;
