//! End-to-end plumbing: run configuration, scan and trajectory I/O,
//! trajectory evaluation, and benchmarking helpers shared by the CLI.

pub mod bench;
pub mod config;
pub mod eval;
pub mod io;

use crate::estimator::{FrameSummary, Odometry};
use crate::geom::Pose;
use crate::simulator::{corrupt, raycast, Scene, SimScan};
use crate::uncertainty::RawPoint;
use config::RunConfig;

/// Everything a finished run produces.
pub struct RunOutput {
    /// One estimated pose per input scan.
    pub poses: Vec<Pose>,
    pub summaries: Vec<FrameSummary>,
}

/// Feeds the scans through a fresh odometry instance configured by `cfg`.
pub fn run_scans(scans: &[Vec<RawPoint>], cfg: &RunConfig) -> RunOutput {
    let mut odom = Odometry::new(
        cfg.map_config(),
        cfg.sensor_noise(),
        cfg.estimator_config(),
        cfg.matcher_config(),
    );
    let mut poses = Vec::with_capacity(scans.len());
    let mut summaries = Vec::with_capacity(scans.len());
    for scan in scans {
        let summary = odom.register_scan(scan);
        poses.push(summary.pose.clone());
        summaries.push(summary);
    }
    RunOutput { poses, summaries }
}

/// As [`run_scans`] but keeps the odometry for further inspection.
pub fn run_scans_with_odometry(scans: &[Vec<RawPoint>], cfg: &RunConfig) -> (RunOutput, Odometry) {
    let mut odom = Odometry::new(
        cfg.map_config(),
        cfg.sensor_noise(),
        cfg.estimator_config(),
        cfg.matcher_config(),
    );
    let mut poses = Vec::with_capacity(scans.len());
    let mut summaries = Vec::with_capacity(scans.len());
    for scan in scans {
        let summary = odom.register_scan(scan);
        poses.push(summary.pose.clone());
        summaries.push(summary);
    }
    (RunOutput { poses, summaries }, odom)
}

/// Ray-casts and corrupts one scan per ground-truth pose; the per-frame seed
/// is derived from the run seed so the whole sequence is reproducible.
pub fn simulate_scans(
    scene: &Scene,
    trajectory: &[Pose],
    pattern: &crate::simulator::ScanPattern,
    cfg: &RunConfig,
) -> Vec<SimScan> {
    trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let clean = raycast(scene, pose, pattern);
            corrupt(&clean, &cfg.sensor_noise(), cfg.seed.wrapping_add(i as u64))
        })
        .collect()
}
