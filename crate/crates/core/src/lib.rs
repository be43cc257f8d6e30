//! Probabilistic adaptive voxel mapping for LiDAR odometry.
//!
//! The crate models the uncertainty of every LiDAR return from its raw
//! range/bearing noise, propagates it through the estimated sensor pose into
//! per-point world covariances, fits plane features with full 6×6 parameter
//! covariance, and organizes them in a coarse-to-fine hash-indexed octree
//! map. Scan registration runs a 3σ-gated point-to-plane match followed by an
//! iterated-Kalman-filter MAP pose update.

pub mod estimator;
pub mod geom;
pub mod matcher;
pub mod pipeline;
pub mod plane;
pub mod simulator;
pub mod uncertainty;
pub mod voxelmap;

pub use geom::{Mat3, Mat6, Pose, Vec3, Vec6};
pub use uncertainty::{RawPoint, SensorNoise, WorldPoint};
