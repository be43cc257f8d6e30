//! Probabilistic point-to-plane association: signed distance, residual
//! variance under the full (plane + point) uncertainty, the 3σ gate, and
//! best-of-several selection by Gaussian density.

use crate::geom::{Mat3, Vec3};
use crate::plane::PlaneFeature;
use crate::uncertainty::{RawPoint, WorldPoint};
use crate::voxelmap::VoxelMap;
use std::collections::HashMap;

/// Floor applied to a residual variance that collapses numerically.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// An accepted point-to-plane association.
#[derive(Clone, Debug)]
pub struct Match {
    /// The source return in the sensor frame.
    pub raw: RawPoint,
    /// Measurement-frame covariance of the return.
    pub local_cov: Mat3,
    /// The return predicted into the world frame with its covariance.
    pub world: WorldPoint,
    /// Snapshot of the matched plane.
    pub plane: PlaneFeature,
    /// Signed point-to-plane distance `nᵀ(p − q)`.
    pub distance: f64,
    /// Residual variance `Σ_w`.
    pub variance: f64,
    /// True when the variance hit [`VARIANCE_FLOOR`].
    pub degenerate_gate: bool,
}

/// Signed point-to-plane distance `d = nᵀ(p − q)`.
pub fn point_to_plane(p: &Vec3, plane: &PlaneFeature) -> f64 {
    plane.normal.dot(&(p - plane.point))
}

/// Residual variance `σ_w² = J·blkdiag(Σ_nq, Σ_p)·Jᵀ` with
/// `J = [(p − q)ᵀ, −nᵀ, nᵀ]`. Returns the (possibly floored) variance and a
/// degeneracy flag.
pub fn residual_variance(p: &WorldPoint, plane: &PlaneFeature) -> (f64, bool) {
    let diff = p.position - plane.point;
    let n = plane.normal;
    let mut j = crate::geom::Vec6::zeros();
    j.fixed_rows_mut::<3>(0).copy_from(&diff);
    j.fixed_rows_mut::<3>(3).copy_from(&(-n));
    let plane_term = (j.transpose() * plane.cov * j)[0];
    let point_term = (n.transpose() * p.cov * n)[0];
    let var = plane_term + point_term;
    if var < VARIANCE_FLOOR {
        (VARIANCE_FLOOR, true)
    } else {
        (var, false)
    }
}

/// Gates `point` against every candidate plane in its root voxel and keeps
/// the one with the highest Gaussian density `N(d; 0, σ_w²)`. `None` when no
/// candidate passes the 3σ test.
pub fn match_point(
    raw: &RawPoint,
    local_cov: &Mat3,
    world: &WorldPoint,
    map: &VoxelMap,
) -> Option<Match> {
    let mut best: Option<Match> = None;
    let mut best_score = f64::NEG_INFINITY;
    for plane in map.query(&world.position) {
        let d = point_to_plane(&world.position, plane);
        let (var, degenerate) = residual_variance(world, plane);
        if d.abs() > 3.0 * var.sqrt() {
            continue;
        }
        // log N(d; 0, σ²) up to a constant.
        let score = -0.5 * (d * d / var + var.ln());
        if score > best_score {
            best_score = score;
            best = Some(Match {
                raw: *raw,
                local_cov: *local_cov,
                world: *world,
                plane: plane.clone(),
                distance: d,
                variance: var,
                degenerate_gate: degenerate,
            });
        }
    }
    best
}

/// Batch driver over [`match_point`]; order-preserving.
pub fn match_scan(
    points: &[(RawPoint, Mat3, WorldPoint)],
    map: &VoxelMap,
) -> Vec<Match> {
    points
        .iter()
        .filter_map(|(raw, cov, world)| match_point(raw, cov, world, map))
        .collect()
}

/// Uniform voxel-grid downsample over sensor-frame positions; keeps the first
/// point per cell in input order and returns the surviving indices.
pub fn voxel_downsample_indices(positions: &[Vec3], leaf: f64) -> Vec<usize> {
    if leaf <= 0.0 {
        return (0..positions.len()).collect();
    }
    let mut seen: HashMap<(i64, i64, i64), ()> = HashMap::new();
    let mut keep = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        if seen.insert(key, ()).is_none() {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Mat6, Vec6};
    use crate::plane::{fit_feature, PlaneFeature};
    use crate::uncertainty::WorldPoint;
    use crate::voxelmap::{MapConfig, VoxelMap};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn z_plane() -> PlaneFeature {
        let pts: Vec<WorldPoint> = (0..25)
            .map(|i| {
                WorldPoint::exact(Vec3::new(
                    (i % 5) as f64 * 0.5 - 1.0,
                    (i / 5) as f64 * 0.5 - 1.0,
                    0.0,
                ))
            })
            .collect();
        fit_feature(&pts, &Vec3::new(0.0, 0.0, 5.0)).unwrap()
    }

    #[test]
    fn distance_basics() {
        let plane = z_plane();
        assert_relative_eq!(point_to_plane(&plane.point, &plane), 0.0, epsilon = 1e-15);
        assert_relative_eq!(
            point_to_plane(&Vec3::new(5.0, -2.0, 0.3), &plane),
            0.3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn distance_matches_hesse_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let plane = z_plane();
        for _ in 0..100 {
            let p = Vec3::new(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            );
            // Hesse normal form: n·p − n·q with independent arithmetic.
            let expected = plane.normal.x * p.x + plane.normal.y * p.y + plane.normal.z * p.z
                - plane.normal.dot(&plane.point);
            assert_relative_eq!(point_to_plane(&p, &plane), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn variance_noiseless_plane() {
        let plane = z_plane(); // exact points → Σ_nq = 0
        let sigma = 0.05;
        let p = WorldPoint::new(
            Vec3::new(0.2, 0.1, 0.0),
            Mat3::from_diagonal_element(sigma * sigma),
        );
        let (var, degenerate) = residual_variance(&p, &plane);
        assert!(!degenerate);
        assert_relative_eq!(var, sigma * sigma, epsilon = 1e-12);
    }

    #[test]
    fn variance_floor() {
        let plane = z_plane();
        let p = WorldPoint::exact(Vec3::new(0.2, 0.1, 0.0));
        let (var, degenerate) = residual_variance(&p, &plane);
        assert_eq!(var, VARIANCE_FLOOR);
        assert!(degenerate);
    }

    #[test]
    fn variance_monte_carlo() {
        // Sample n (tangent-plane), q and p from their covariances and check
        // the empirical Var(d) against the closed form.
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let sigma = 0.03;
        let base: Vec<WorldPoint> = (0..100)
            .map(|_| {
                WorldPoint::new(
                    Vec3::new(rng.gen::<f64>() * 3.0 - 1.5, rng.gen::<f64>() * 3.0 - 1.5, 0.0),
                    Mat3::from_diagonal_element(sigma * sigma),
                )
            })
            .collect();
        let plane = fit_feature(&base, &Vec3::new(0.0, 0.0, 10.0)).unwrap();
        let point_sigma = 0.02;
        let p = WorldPoint::new(
            Vec3::new(0.3, -0.4, 0.0),
            Mat3::from_diagonal_element(point_sigma * point_sigma),
        );
        let (var, _) = residual_variance(&p, &plane);

        // Draw (δn, δq) jointly from Σ_nq via its Cholesky-like square root.
        let eig = nalgebra::SymmetricEigen::new(plane.cov);
        let sqrt: Mat6 = &eig.eigenvectors
            * Mat6::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
            * eig.eigenvectors.transpose();
        let trials = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..trials {
            let z = Vec6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let d6 = sqrt * z;
            let dn = Vec3::new(d6[0], d6[1], d6[2]);
            let dq = Vec3::new(d6[3], d6[4], d6[5]);
            let dp = Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * point_sigma;
            let n = plane.normal + dn;
            let d = n.dot(&(p.position + dp - plane.point - dq));
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / trials as f64;
        let empirical = sum2 / trials as f64 - mean * mean;
        let rel = (empirical - var).abs() / var;
        assert!(rel < 0.10, "relative error {rel}");
    }

    fn map_with_z_plane() -> VoxelMap {
        let pts: Vec<WorldPoint> = (0..100)
            .map(|i| {
                WorldPoint::new(
                    Vec3::new(
                        0.1 + (i % 10) as f64 * 0.2,
                        0.1 + (i / 10) as f64 * 0.2,
                        0.5,
                    ),
                    Mat3::from_diagonal_element(4e-4),
                )
            })
            .collect();
        VoxelMap::build(&pts, &Vec3::new(1.0, 1.0, 5.0), MapConfig::default())
    }

    #[test]
    fn match_on_plane() {
        let map = map_with_z_plane();
        let raw = RawPoint::new(Vec3::z(), 1.0).unwrap();
        let world = WorldPoint::new(
            Vec3::new(1.0, 1.0, 0.5),
            Mat3::from_diagonal_element(1e-4),
        );
        let m = match_point(&raw, &Mat3::zeros(), &world, &map).expect("match");
        assert!(m.distance.abs() < 1e-9);
    }

    #[test]
    fn far_point_discarded() {
        let map = map_with_z_plane();
        let raw = RawPoint::new(Vec3::z(), 1.0).unwrap();
        // 1 m off a plane whose residual sigma is ~2 cm: 50σ, discarded.
        let world = WorldPoint::new(
            Vec3::new(1.0, 1.0, 1.5),
            Mat3::from_diagonal_element(4e-4),
        );
        assert!(match_point(&raw, &Mat3::zeros(), &world, &map).is_none());
    }

    #[test]
    fn match_scan_elementwise_equivalence() {
        let map = map_with_z_plane();
        let raw = RawPoint::new(Vec3::z(), 1.0).unwrap();
        let scan: Vec<(RawPoint, Mat3, WorldPoint)> = (0..20)
            .map(|i| {
                let world = WorldPoint::new(
                    Vec3::new(0.2 + 0.08 * i as f64, 1.0, 0.5 + 0.001 * i as f64),
                    Mat3::from_diagonal_element(4e-4),
                );
                (raw, Mat3::zeros(), world)
            })
            .collect();
        let batch = match_scan(&scan, &map);
        let individual: Vec<Match> = scan
            .iter()
            .filter_map(|(r, c, w)| match_point(r, c, w, &map))
            .collect();
        assert_eq!(batch.len(), individual.len());
        for (a, b) in batch.iter().zip(&individual) {
            assert_eq!(a.distance, b.distance);
            assert_eq!(a.variance, b.variance);
        }
        assert!(match_scan(&[], &map).is_empty());
    }

    #[test]
    fn selection_invariant_under_common_variance_scaling() {
        // With equal variances the density argmax reduces to smallest |d|,
        // and scaling all variances by a common factor (gate permitting)
        // cannot change the winner.
        let d = [0.01, 0.03, 0.02];
        let var = [1e-4, 1e-4, 1e-4];
        let score = |d: f64, v: f64| -0.5 * (d * d / v + v.ln());
        for scale in [1.0, 10.0, 0.5] {
            let mut best = 0;
            for i in 1..3 {
                if score(d[i], var[i] * scale) > score(d[best], var[best] * scale) {
                    best = i;
                }
            }
            assert_eq!(best, 0);
        }
    }

    #[test]
    fn downsample_deterministic_and_covering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0))
            .collect();
        let a = voxel_downsample_indices(&pts, 0.25);
        let b = voxel_downsample_indices(&pts, 0.25);
        assert_eq!(a, b);
        assert!(a.len() < pts.len());
        // Zero leaf disables downsampling.
        assert_eq!(voxel_downsample_indices(&pts, 0.0).len(), pts.len());
    }
}
