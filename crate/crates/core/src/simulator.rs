//! Synthetic ground-truth generator: planar scenes, ray-cast scans with the
//! range/bearing noise model, canonical trajectories, and the Monte-Carlo
//! covariance oracles the acceptance suite depends on.
//!
//! Everything is deterministic under a fixed seed (ChaCha8).

use crate::geom::{skew, so3_exp, Mat3, Mat6, Pose, Vec3, Vec6};
use crate::uncertainty::{tangent_basis, RawPoint, SensorNoise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene line {line}: expected 12 numbers (4 corners), got {got}")]
    BadPatchLine { line: usize, got: usize },
    #[error("scene line {line}: {0}", line = .1)]
    BadNumber(#[source] std::num::ParseFloatError, usize),
    #[error("degenerate patch at line {0} (zero area)")]
    DegeneratePatch(usize),
}

/// A finite planar parallelogram patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
}

impl Patch {
    pub fn new(origin: Vec3, edge_u: Vec3, edge_v: Vec3) -> Self {
        Self {
            origin,
            edge_u,
            edge_v,
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.edge_u.cross(&self.edge_v).normalize()
    }

    pub fn center(&self) -> Vec3 {
        self.origin + (self.edge_u + self.edge_v) * 0.5
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(&self.edge_v).norm()
    }

    /// First intersection of `start + t·dir` with the patch for `t > 1e-9`.
    pub fn intersect(&self, start: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.edge_u.cross(&self.edge_v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - start)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let hit = start + dir * t - self.origin;
        // Solve hit = a·u + b·v in the patch plane.
        let uu = self.edge_u.norm_squared();
        let vv = self.edge_v.norm_squared();
        let uv = self.edge_u.dot(&self.edge_v);
        let hu = hit.dot(&self.edge_u);
        let hv = hit.dot(&self.edge_v);
        let det = uu * vv - uv * uv;
        if det.abs() < 1e-15 {
            return None;
        }
        let a = (hu * vv - hv * uv) / det;
        let b = (hv * uu - hu * uv) / det;
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            Some(t)
        } else {
            None
        }
    }

    /// Deterministic near-uniform sample of `count` points on the patch
    /// (grid order with remainder points interleaved).
    pub fn sample_grid(&self, count: usize) -> Vec<Vec3> {
        // Endpoint-inclusive rows with the remainder spread across them:
        // every row and column spans the full patch, so the in-plane scatter
        // does not shrink with count.
        let rows = ((count as f64).sqrt().floor() as usize).clamp(2, count / 2);
        let base = count / rows;
        let extra = count % rows;
        let mut pts = Vec::with_capacity(count);
        for j in 0..rows {
            let cols = base + usize::from(j < extra);
            let b = j as f64 / (rows - 1) as f64;
            for i in 0..cols {
                let a = if cols == 1 {
                    0.5
                } else {
                    i as f64 / (cols - 1) as f64
                };
                pts.push(self.origin + self.edge_u * a + self.edge_v * b);
            }
        }
        pts
    }
}

/// A collection of planar patches with first-hit ray casting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub patches: Vec<Patch>,
}

impl Scene {
    /// First patch hit by a world-frame ray, with the hit distance.
    pub fn raycast_ray(&self, start: &Vec3, dir: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, patch) in self.patches.iter().enumerate() {
            if let Some(t) = patch.intersect(start, dir) {
                if best.map_or(true, |(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
        }
        best
    }

    /// One axis-aligned wall in front of the sensor (x = 5).
    pub fn single_wall() -> Self {
        Self {
            patches: vec![Patch::new(
                Vec3::new(5.0, -4.0, -4.0),
                Vec3::new(0.0, 8.0, 0.0),
                Vec3::new(0.0, 0.0, 8.0),
            )],
        }
    }

    /// Closed box room, 10×8×4 m around the origin.
    pub fn room() -> Self {
        let (hx, hy, hz) = (5.0, 4.0, 2.0);
        Self {
            patches: vec![
                // floor, ceiling
                Patch::new(
                    Vec3::new(-hx, -hy, -hz),
                    Vec3::new(2.0 * hx, 0.0, 0.0),
                    Vec3::new(0.0, 2.0 * hy, 0.0),
                ),
                Patch::new(
                    Vec3::new(-hx, -hy, hz),
                    Vec3::new(2.0 * hx, 0.0, 0.0),
                    Vec3::new(0.0, 2.0 * hy, 0.0),
                ),
                // ±x walls
                Patch::new(
                    Vec3::new(hx, -hy, -hz),
                    Vec3::new(0.0, 2.0 * hy, 0.0),
                    Vec3::new(0.0, 0.0, 2.0 * hz),
                ),
                Patch::new(
                    Vec3::new(-hx, -hy, -hz),
                    Vec3::new(0.0, 2.0 * hy, 0.0),
                    Vec3::new(0.0, 0.0, 2.0 * hz),
                ),
                // ±y walls
                Patch::new(
                    Vec3::new(-hx, hy, -hz),
                    Vec3::new(2.0 * hx, 0.0, 0.0),
                    Vec3::new(0.0, 0.0, 2.0 * hz),
                ),
                Patch::new(
                    Vec3::new(-hx, -hy, -hz),
                    Vec3::new(2.0 * hx, 0.0, 0.0),
                    Vec3::new(0.0, 0.0, 2.0 * hz),
                ),
            ],
        }
    }

    /// Long corridor along +x with boxes on the floor; the boxes break the
    /// translational symmetry along the corridor and exercise octree
    /// subdivision.
    pub fn corridor_with_boxes(length: f64) -> Self {
        let hw = 4.0; // half width
        let hh = 4.0; // height
        let mut patches = vec![
            // floor
            Patch::new(
                Vec3::new(-5.0, -hw, 0.0),
                Vec3::new(length + 10.0, 0.0, 0.0),
                Vec3::new(0.0, 2.0 * hw, 0.0),
            ),
            // side walls
            Patch::new(
                Vec3::new(-5.0, -hw, 0.0),
                Vec3::new(length + 10.0, 0.0, 0.0),
                Vec3::new(0.0, 0.0, hh),
            ),
            Patch::new(
                Vec3::new(-5.0, hw, 0.0),
                Vec3::new(length + 10.0, 0.0, 0.0),
                Vec3::new(0.0, 0.0, hh),
            ),
            // end wall
            Patch::new(
                Vec3::new(length + 5.0, -hw, 0.0),
                Vec3::new(0.0, 2.0 * hw, 0.0),
                Vec3::new(0.0, 0.0, hh),
            ),
        ];
        // Boxes every 4 m, alternating sides. Large enough that each face
        // spans several finest-layer voxels worth of returns.
        let mut x = 3.0;
        let mut side = 1.0;
        while x < length {
            let y = side * (hw - 1.6);
            let (s, h) = (1.6, 1.2);
            let base = Vec3::new(x, y - s * 0.5, 0.0);
            patches.push(Patch::new(
                base + Vec3::new(0.0, 0.0, h),
                Vec3::new(s, 0.0, 0.0),
                Vec3::new(0.0, s, 0.0),
            ));
            patches.push(Patch::new(
                base,
                Vec3::new(0.0, s, 0.0),
                Vec3::new(0.0, 0.0, h),
            ));
            patches.push(Patch::new(
                base + Vec3::new(s, 0.0, 0.0),
                Vec3::new(0.0, s, 0.0),
                Vec3::new(0.0, 0.0, h),
            ));
            patches.push(Patch::new(
                base,
                Vec3::new(s, 0.0, 0.0),
                Vec3::new(0.0, 0.0, h),
            ));
            patches.push(Patch::new(
                base + Vec3::new(0.0, s, 0.0),
                Vec3::new(s, 0.0, 0.0),
                Vec3::new(0.0, 0.0, h),
            ));
            x += 4.0;
            side = -side;
        }
        Self { patches }
    }

    /// Sparse field of narrow vertical patches, an unstructured stand-in for
    /// tree trunks, plus a ground plane.
    pub fn sparse_forest(extent: f64, trunks: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut patches = vec![Patch::new(
            Vec3::new(-extent, -extent, 0.0),
            Vec3::new(2.0 * extent, 0.0, 0.0),
            Vec3::new(0.0, 2.0 * extent, 0.0),
        )];
        for _ in 0..trunks {
            let x = (rng.gen::<f64>() - 0.5) * 2.0 * (extent - 1.0);
            let y = (rng.gen::<f64>() - 0.5) * 2.0 * (extent - 1.0);
            let yaw = rng.gen::<f64>() * std::f64::consts::PI;
            let width = 0.3 + rng.gen::<f64>() * 0.3;
            let height = 2.0 + rng.gen::<f64>() * 3.0;
            let dir = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
            patches.push(Patch::new(
                Vec3::new(x, y, 0.0) - dir * (width * 0.5),
                dir * width,
                Vec3::new(0.0, 0.0, height),
            ));
        }
        Self { patches }
    }

    /// Plain-text format: one patch per line as four corner points
    /// `c0 c1 c2 c3` (12 numbers); `#` lines are comments.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# patch corners: c0x c0y c0z c1.. c2.. c3..\n");
        for p in &self.patches {
            let c0 = p.origin;
            let c1 = p.origin + p.edge_u;
            let c2 = p.origin + p.edge_u + p.edge_v;
            let c3 = p.origin + p.edge_v;
            for (i, c) in [c0, c1, c2, c3].iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{} {} {}", c.x, c.y, c.z);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SceneError> {
        let mut patches = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let nums = nums.map_err(|e| SceneError::BadNumber(e, idx + 1))?;
            if nums.len() != 12 {
                return Err(SceneError::BadPatchLine {
                    line: idx + 1,
                    got: nums.len(),
                });
            }
            let c = |k: usize| Vec3::new(nums[3 * k], nums[3 * k + 1], nums[3 * k + 2]);
            let patch = Patch::new(c(0), c(1) - c(0), c(3) - c(0));
            if patch.area() <= 0.0 {
                return Err(SceneError::DegeneratePatch(idx + 1));
            }
            patches.push(patch);
        }
        Ok(Self { patches })
    }
}

/// Ray direction generator in the sensor frame.
#[derive(Clone, Debug, PartialEq)]
pub enum ScanPattern {
    /// Azimuth × elevation grid emulating a spinning LiDAR.
    SphericalGrid {
        azimuth_steps: usize,
        elevation_steps: usize,
        /// Elevation span in radians, symmetric about the horizon.
        elevation_span: f64,
    },
    /// Progressive rosette sampler emulating a non-repetitive solid-state
    /// pattern: sparse first, densifying over the scan.
    Rosette {
        points: usize,
        /// Half-angle of the conical field of view (radians), looking +x.
        half_fov: f64,
    },
}

impl ScanPattern {
    pub fn directions(&self) -> Vec<Vec3> {
        match *self {
            ScanPattern::SphericalGrid {
                azimuth_steps,
                elevation_steps,
                elevation_span,
            } => {
                let mut dirs = Vec::with_capacity(azimuth_steps * elevation_steps);
                for e in 0..elevation_steps {
                    let frac = if elevation_steps > 1 {
                        e as f64 / (elevation_steps - 1) as f64 - 0.5
                    } else {
                        0.0
                    };
                    let el = frac * elevation_span;
                    for a in 0..azimuth_steps {
                        let az = a as f64 / azimuth_steps as f64 * std::f64::consts::TAU;
                        dirs.push(Vec3::new(
                            el.cos() * az.cos(),
                            el.cos() * az.sin(),
                            el.sin(),
                        ));
                    }
                }
                dirs
            }
            ScanPattern::Rosette { points, half_fov } => {
                // Two incommensurate angular rates sweep the cone; golden-
                // angle radial growth keeps early samples sparse and spread.
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..points)
                    .map(|i| {
                        let frac = (i as f64 + 0.5) / points as f64;
                        let r = half_fov * frac.sqrt();
                        let phi = i as f64 * golden;
                        let (sy, sz) = (r.cos(), r.sin());
                        let axis = Vec3::new(sy, sz * phi.cos(), sz * phi.sin());
                        axis.normalize()
                    })
                    .collect()
            }
        }
    }
}

/// One simulated return with ground truth attached.
#[derive(Clone, Debug, PartialEq)]
pub struct SimPoint {
    /// The (possibly corrupted) measurement in the sensor frame.
    pub raw: RawPoint,
    /// Index of the patch the noiseless parent lies on.
    pub patch: usize,
    /// Noiseless sensor-frame position.
    pub true_position: Vec3,
}

/// A simulated scan with its generating ground-truth pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SimScan {
    pub points: Vec<SimPoint>,
    pub pose: Pose,
}

impl SimScan {
    pub fn raw_points(&self) -> Vec<RawPoint> {
        self.points.iter().map(|p| p.raw).collect()
    }
}

/// Casts the pattern from `pose` into the scene with first-hit semantics;
/// no-hit rays are omitted.
pub fn raycast(scene: &Scene, pose: &Pose, pattern: &ScanPattern) -> SimScan {
    let start = pose.translation;
    let points = pattern
        .directions()
        .into_iter()
        .filter_map(|dir_local| {
            let dir = pose.rotation * dir_local;
            scene.raycast_ray(&start, &dir).map(|(patch, t)| SimPoint {
                raw: RawPoint {
                    bearing: dir_local,
                    depth: t,
                },
                patch,
                true_position: dir_local * t,
            })
        })
        .collect();
    SimScan {
        points,
        pose: pose.clone(),
    }
}

/// Applies the range/bearing noise model to every return: the depth is
/// perturbed by `N(0, σ_d²)` and the bearing rotated within its tangent
/// plane by `N(0, σ_ω²·I₂)`. Seeded and reproducible.
pub fn corrupt(scan: &SimScan, noise: &SensorNoise, seed: u64) -> SimScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = scan
        .points
        .iter()
        .map(|p| {
            let basis = tangent_basis(&p.raw.bearing).expect("simulated bearings are unit");
            let dd: f64 = rng.sample::<f64, _>(StandardNormal) * noise.sigma_d;
            let delta = nalgebra::Vector2::new(
                rng.sample::<f64, _>(StandardNormal) * noise.sigma_omega,
                rng.sample::<f64, _>(StandardNormal) * noise.sigma_omega,
            );
            // Tangent displacement matching the covariance model's
            // −d⌊ω⌋∧N(ω)δ_ω term (up to the depth factor).
            let tangent: Vec3 = -skew(&p.raw.bearing) * basis * delta;
            let bearing = (so3_exp(&p.raw.bearing.cross(&tangent)) * p.raw.bearing).normalize();
            SimPoint {
                raw: RawPoint {
                    bearing,
                    depth: (p.raw.depth + dd).max(0.0),
                },
                patch: p.patch,
                true_position: p.true_position,
            }
        })
        .collect();
    SimScan {
        points,
        pose: scan.pose.clone(),
    }
}

/// Empirical covariance of the stacked `(n, q)` plane parameters over
/// repeated noisy refits of `count` deterministic samples on `patch`.
///
/// Per-point noise is isotropic with the given variance; the normal sign is
/// fixed by orienting toward `viewpoint` each trial.
pub fn mc_plane_cov_oracle(
    patch: &Patch,
    count: usize,
    point_variance: f64,
    viewpoint: &Vec3,
    trials: usize,
    seed: u64,
) -> Mat6 {
    assert!(trials >= 1);
    let base = patch.sample_grid(count);
    let sigma = point_variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = Vec6::zeros();
    let mut second = Mat6::zeros();
    for _ in 0..trials {
        let noisy: Vec<Vec3> = base
            .iter()
            .map(|p| {
                p + Vec3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ) * sigma
            })
            .collect();
        let fit = crate::plane::fit_plane(&noisy).expect("enough points");
        let n = crate::plane::orient_normal(&fit, viewpoint);
        let v = Vec6::new(n.x, n.y, n.z, fit.centroid.x, fit.centroid.y, fit.centroid.z);
        sum += v;
        second += v * v.transpose();
    }
    let mean = sum / trials as f64;
    crate::geom::symmetrize6(&(second / trials as f64 - mean * mean.transpose()))
}

/// Analytic plane-parameter covariance evaluated at the patch's noiseless
/// sample geometry with isotropic per-point variance.
pub fn analytic_plane_cov(
    patch: &Patch,
    count: usize,
    point_variance: f64,
    viewpoint: &Vec3,
) -> Mat6 {
    let base = patch.sample_grid(count);
    let fit = crate::plane::fit_plane(&base).expect("enough points");
    let normal = crate::plane::orient_normal(&fit, viewpoint);
    let jac = crate::plane::plane_jacobians(&fit, &normal, &base).expect("non-degenerate patch");
    let covs = vec![Mat3::from_diagonal_element(point_variance); base.len()];
    crate::plane::plane_cov(&fit, &jac, &covs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrajectoryKind {
    Static,
    /// Straight line along +x at `step` meters per frame.
    Corridor { step: f64 },
    /// Planar circle that starts and ends at the same pose.
    Loop { radius: f64 },
    /// Yaw in place at `step` radians per frame.
    Rotation { step: f64 },
}

/// Ground-truth pose per frame. Loop trajectories satisfy
/// `poses.first() == poses.last()` exactly.
pub fn make_trajectory(kind: TrajectoryKind, frames: usize) -> Vec<Pose> {
    (0..frames)
        .map(|i| match kind {
            TrajectoryKind::Static => Pose::identity(),
            TrajectoryKind::Corridor { step } => {
                Pose::new(Mat3::identity(), Vec3::new(step * i as f64, 0.0, 0.0))
            }
            TrajectoryKind::Loop { radius } => {
                if frames < 2 || i == 0 || i == frames - 1 {
                    return Pose::new(Mat3::identity(), Vec3::new(radius, 0.0, 0.0));
                }
                let angle = std::f64::consts::TAU * i as f64 / (frames - 1) as f64;
                let pos = Vec3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
                Pose::new(so3_exp(&Vec3::new(0.0, 0.0, angle)), pos)
            }
            TrajectoryKind::Rotation { step } => {
                Pose::new(so3_exp(&Vec3::new(0.0, 0.0, step * i as f64)), Vec3::zeros())
            }
        })
        .collect()
}
