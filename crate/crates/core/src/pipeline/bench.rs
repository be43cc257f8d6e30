//! Benchmark helpers: per-stage frame timings aggregated from run
//! diagnostics, and a map-size scaling sweep for the plane query.

use crate::estimator::FrameSummary;
use crate::geom::Vec3;
use crate::uncertainty::WorldPoint;
use crate::voxelmap::{MapConfig, VoxelMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub frames: usize,
    pub match_ms_mean: f64,
    pub update_ms_mean: f64,
    pub insert_ms_mean: f64,
    pub total_ms_mean: f64,
}

/// Averages the per-stage wall-clock timings over all frames after the first
/// (the map-building frame has no match/update stage).
pub fn aggregate_timings(summaries: &[FrameSummary]) -> StageTimings {
    let relevant: Vec<&FrameSummary> = summaries.iter().skip(1).collect();
    if relevant.is_empty() {
        return StageTimings::default();
    }
    let n = relevant.len() as f64;
    let (mut m, mut u, mut i) = (0.0, 0.0, 0.0);
    for s in &relevant {
        m += s.match_millis;
        u += s.update_millis;
        i += s.insert_millis;
    }
    StageTimings {
        frames: relevant.len(),
        match_ms_mean: m / n,
        update_ms_mean: u / n,
        insert_ms_mean: i / n,
        total_ms_mean: (m + u + i) / n,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QueryScalePoint {
    pub roots: usize,
    pub planes: usize,
    /// Mean wall-clock time per query (nanoseconds).
    pub ns_per_query: f64,
}

/// Builds one planar root voxel per grid cell.
fn grid_of_planes(roots_per_side: usize, cfg: &MapConfig) -> VoxelMap {
    let mut map = VoxelMap::new(cfg.clone());
    let v = cfg.voxel_size;
    let origin = Vec3::new(0.0, 0.0, 50.0);
    for gx in 0..roots_per_side {
        for gy in 0..roots_per_side {
            let base = Vec3::new(gx as f64 * v, gy as f64 * v, 0.0);
            let pts: Vec<WorldPoint> = (0..cfg.converge_points.max(cfg.min_points) + 10)
                .map(|i| {
                    let k = i as f64;
                    WorldPoint::new(
                        base + Vec3::new(
                            (k * 0.37).fract() * v * 0.9 + 0.05 * v,
                            (k * 0.61).fract() * v * 0.9 + 0.05 * v,
                            0.5 * v,
                        ),
                        crate::geom::Mat3::from_diagonal_element(1e-4),
                    )
                })
                .collect();
            map.insert(&pts, &origin);
        }
    }
    map
}

/// Measures mean per-point query time against maps of increasing root count.
/// The query should be ~O(1) in map size thanks to the hash index.
pub fn query_scaling(sides: &[usize], queries: usize, cfg: &MapConfig) -> Vec<QueryScalePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    sides
        .iter()
        .map(|&side| {
            let map = grid_of_planes(side, cfg);
            let extent = side as f64 * cfg.voxel_size;
            let probes: Vec<Vec3> = (0..queries)
                .map(|_| {
                    Vec3::new(
                        rng.gen::<f64>() * extent,
                        rng.gen::<f64>() * extent,
                        rng.gen::<f64>() * cfg.voxel_size,
                    )
                })
                .collect();
            // Warm-up pass so allocator effects do not skew the first cell,
            // then best-of-3 timing so scheduler noise cannot inflate a cell.
            let mut hits = 0usize;
            for p in &probes {
                hits += map.query(p).len();
            }
            let mut elapsed = f64::INFINITY;
            for _ in 0..3 {
                let start = Instant::now();
                for p in &probes {
                    hits += map.query(p).len();
                }
                elapsed = elapsed.min(start.elapsed().as_nanos() as f64);
            }
            assert!(hits > 0, "benchmark map produced no plane hits");
            QueryScalePoint {
                roots: map.root_count(),
                planes: map.stats().total_planes,
                ns_per_query: elapsed / queries as f64,
            }
        })
        .collect()
}
