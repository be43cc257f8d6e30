//! Plane fitting from world points and first-order propagation of per-point
//! covariances into a 6×6 covariance of the plane parameters `(n, q)`.
//!
//! The scatter matrix uses the biased `1/N` normalization; all Jacobians
//! assume it. The normal is the eigenvector of the minimum eigenvalue, with
//! its sign oriented toward the observing sensor at construction time.

use crate::geom::{sym_eigen3, symmetrize6, Eigen3, Mat3, Mat6, Vec3};
use crate::uncertainty::WorldPoint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlaneError {
    #[error("plane fit needs at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate scatter: |λ3 − λ2| = {gap} below floor {floor}")]
    DegeneratePlane { gap: f64, floor: f64 },
}

/// Centroid, scatter and eigensystem of a point set.
#[derive(Clone, Debug)]
pub struct PlaneFit {
    /// Arithmetic mean of the points.
    pub centroid: Vec3,
    /// `(1/N)·Σ (p−q)(p−q)ᵀ`.
    pub scatter: Mat3,
    pub eigen: Eigen3,
    pub count: usize,
}

impl PlaneFit {
    /// Minimum eigenvalue of the scatter.
    pub fn lambda3(&self) -> f64 {
        self.eigen.values[2]
    }
}

/// Fitted plane with first-order parameter covariance.
#[derive(Clone, Debug)]
pub struct PlaneFeature {
    /// Unit normal, sign-oriented toward the sensor at construction.
    pub normal: Vec3,
    /// Point on the plane (the centroid).
    pub point: Vec3,
    /// 6×6 covariance of `(n, q)`; the first 3 rows/cols belong to the normal.
    pub cov: Mat6,
    pub fit: PlaneFit,
    /// Set by the voxel map once enough points were absorbed; parameters are
    /// frozen afterward.
    pub converged: bool,
}

impl PlaneFeature {
    /// Trace of the normal block of the covariance.
    pub fn normal_cov_trace(&self) -> f64 {
        self.cov[(0, 0)] + self.cov[(1, 1)] + self.cov[(2, 2)]
    }
}

pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFit, PlaneError> {
    let n = points.len();
    if n < 3 {
        return Err(PlaneError::InsufficientPoints(n));
    }
    let inv = 1.0 / n as f64;
    let mut centroid = Vec3::zeros();
    for p in points {
        centroid += p;
    }
    centroid *= inv;
    let mut scatter = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    scatter *= inv;
    let eigen = sym_eigen3(&scatter);
    Ok(PlaneFit {
        centroid,
        scatter,
        eigen,
        count: n,
    })
}

/// Picks the sign of the minimum eigenvector so the normal faces `viewpoint`.
/// An in-plane viewpoint falls back to the eigensolver's deterministic sign.
pub fn orient_normal(fit: &PlaneFit, viewpoint: &Vec3) -> Vec3 {
    let u3: Vec3 = fit.eigen.vectors.column(2).into();
    let facing = u3.dot(&(viewpoint - fit.centroid));
    if facing < 0.0 {
        -u3
    } else {
        u3
    }
}

/// Relative floor below which the eigengap `|λ3 − λ2|` makes the normal
/// Jacobian meaningless (cylindrical/spherical scatter).
pub fn degeneracy_floor(fit: &PlaneFit) -> f64 {
    1e-6 * fit.eigen.values[0].max(1e-12)
}

/// Per-point Jacobians `∂n/∂p_i` (3×3 each) for a fit with normal `n = ±u₃`.
///
/// `∂q/∂p_i = (1/N)·I` for every point and is not materialized.
pub fn plane_jacobians(
    fit: &PlaneFit,
    normal: &Vec3,
    points: &[Vec3],
) -> Result<Vec<Mat3>, PlaneError> {
    debug_assert_eq!(points.len(), fit.count);
    let lam = &fit.eigen.values;
    let floor = degeneracy_floor(fit);
    let gap = (lam[2] - lam[1]).abs();
    if gap < floor {
        return Err(PlaneError::DegeneratePlane { gap, floor });
    }
    let n_points = fit.count as f64;
    let u = &fit.eigen.vectors;
    // Row m of the stacked F matrix: (p−q)ᵀ(u_m nᵀ + n u_mᵀ) / (N(λ3 − λm)).
    let mut sym = [Mat3::zeros(); 2];
    for m in 0..2 {
        let um: Vec3 = u.column(m).into();
        sym[m] = (um * normal.transpose() + normal * um.transpose())
            / (n_points * (lam[2] - lam[m]));
    }
    let jacobians = points
        .iter()
        .map(|p| {
            let d = p - fit.centroid;
            let mut f = Mat3::zeros();
            for m in 0..2 {
                f.set_row(m, &(d.transpose() * sym[m]));
            }
            u * f
        })
        .collect();
    Ok(jacobians)
}

/// First-order covariance of `(n, q)`:
/// `Σ = Σᵢ Jᵢ·Σ_pᵢ·Jᵢᵀ` with `Jᵢ = [∂n/∂pᵢ; (1/N)·I]`.
pub fn plane_cov(fit: &PlaneFit, normal_jacobians: &[Mat3], point_covs: &[Mat3]) -> Mat6 {
    debug_assert_eq!(normal_jacobians.len(), point_covs.len());
    let inv_n = 1.0 / fit.count as f64;
    let mut nn = Mat3::zeros();
    let mut nq = Mat3::zeros();
    let mut qq = Mat3::zeros();
    for (jn, sigma) in normal_jacobians.iter().zip(point_covs) {
        nn += jn * sigma * jn.transpose();
        nq += jn * sigma * inv_n;
        qq += sigma * (inv_n * inv_n);
    }
    let mut cov = Mat6::zeros();
    cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&nn);
    cov.fixed_view_mut::<3, 3>(0, 3).copy_from(&nq);
    cov.fixed_view_mut::<3, 3>(3, 0).copy_from(&nq.transpose());
    cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&qq);
    symmetrize6(&cov)
}

/// Fits a full plane feature (parameters + covariance) from world points.
pub fn fit_feature(points: &[WorldPoint], viewpoint: &Vec3) -> Result<PlaneFeature, PlaneError> {
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let fit = fit_plane(&positions)?;
    let normal = orient_normal(&fit, viewpoint);
    let jacobians = plane_jacobians(&fit, &normal, &positions)?;
    let covs: Vec<Mat3> = points.iter().map(|p| p.cov).collect();
    let cov = plane_cov(&fit, &jacobians, &covs);
    Ok(PlaneFeature {
        normal,
        point: fit.centroid,
        cov,
        fit,
        converged: false,
    })
}
