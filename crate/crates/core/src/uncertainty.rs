//! Point uncertainty model: measurement-frame covariance of a single LiDAR
//! return (ranging + bearing noise) and its propagation into the world frame
//! through an uncertain sensor pose.

use crate::geom::{skew, symmetrize, Mat3, Mat3x2, Pose, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("bearing vector is not unit length (norm = {0})")]
    NonUnitBearing(f64),
    #[error("sensor noise parameters must be positive (sigma_d = {sigma_d}, sigma_omega = {sigma_omega})")]
    NonPositiveNoise { sigma_d: f64, sigma_omega: f64 },
}

/// Per-return measurement noise: ranging standard deviation (meters) and an
/// isotropic bearing-angle standard deviation (radians) in the tangent plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorNoise {
    pub sigma_d: f64,
    pub sigma_omega: f64,
}

impl SensorNoise {
    pub fn new(sigma_d: f64, sigma_omega: f64) -> Result<Self, UncertaintyError> {
        if sigma_d <= 0.0 || sigma_omega <= 0.0 {
            return Err(UncertaintyError::NonPositiveNoise { sigma_d, sigma_omega });
        }
        Ok(Self { sigma_d, sigma_omega })
    }

    /// Typical LiDAR datasheet magnitudes: 2 cm ranging, 0.05° bearing.
    pub fn default_lidar() -> Self {
        Self {
            sigma_d: 0.02,
            sigma_omega: 0.05f64.to_radians(),
        }
    }
}

/// A single LiDAR return: unit bearing and depth along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPoint {
    pub bearing: Vec3,
    pub depth: f64,
}

impl RawPoint {
    pub fn new(bearing: Vec3, depth: f64) -> Result<Self, UncertaintyError> {
        let norm = bearing.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(UncertaintyError::NonUnitBearing(norm));
        }
        Ok(Self { bearing, depth })
    }

    /// Bearing/depth decomposition of a Cartesian point in the sensor frame.
    /// Returns `None` for zero-range points.
    pub fn from_cartesian(p: &Vec3) -> Option<Self> {
        let depth = p.norm();
        if depth <= 0.0 || !depth.is_finite() {
            return None;
        }
        Some(Self {
            bearing: p / depth,
            depth,
        })
    }

    /// Position in the sensor frame: `d·ω`.
    pub fn position(&self) -> Vec3 {
        self.bearing * self.depth
    }
}

/// A point in the world frame with its 3×3 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPoint {
    pub position: Vec3,
    pub cov: Mat3,
}

impl WorldPoint {
    pub fn new(position: Vec3, cov: Mat3) -> Self {
        Self {
            position,
            cov: symmetrize(&cov),
        }
    }

    /// Exactly known point.
    pub fn exact(position: Vec3) -> Self {
        Self {
            position,
            cov: Mat3::zeros(),
        }
    }
}

/// Deterministic orthonormal basis `N(ω)` of the tangent plane at a unit
/// bearing, built from the coordinate axis least aligned with `ω`.
pub fn tangent_basis(omega: &Vec3) -> Result<Mat3x2, UncertaintyError> {
    let norm = omega.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(UncertaintyError::NonUnitBearing(norm));
    }
    let imin = omega.abs().imin();
    let mut axis = Vec3::zeros();
    axis[imin] = 1.0;
    let n1 = (axis - omega * omega.dot(&axis)).normalize();
    let n2 = omega.cross(&n1);
    let mut basis = Mat3x2::zeros();
    basis.set_column(0, &n1);
    basis.set_column(1, &n2);
    Ok(basis)
}

/// Measurement-frame covariance of a return:
/// `Σ = A·blkdiag(σ_d², σ_ω²·I₂)·Aᵀ` with `A = [ω, −d·⌊ω⌋∧·N(ω)]`.
pub fn local_point_cov(rp: &RawPoint, noise: &SensorNoise) -> Mat3 {
    let basis = tangent_basis(&rp.bearing).expect("RawPoint carries a unit bearing");
    let bearing_block: Mat3x2 = skew(&rp.bearing) * basis * (-rp.depth);
    let range = noise.sigma_d * noise.sigma_d;
    let ang = noise.sigma_omega * noise.sigma_omega;
    let cov = rp.bearing * rp.bearing.transpose() * range
        + bearing_block * bearing_block.transpose() * ang;
    symmetrize(&cov)
}

/// Projects a return into the world frame through an uncertain pose and
/// propagates its covariance:
/// `Σ_W = R·(Σ_L + ⌊ᴸp⌋∧·Σ_R·⌊ᴸp⌋∧ᵀ)·Rᵀ + Σ_t`
/// under the right-perturbation convention (`Σ_R` lives in the body tangent
/// space, so the rotational term is conjugated by `R`).
pub fn world_point_cov(rp: &RawPoint, local_cov: &Mat3, pose: &Pose) -> WorldPoint {
    let local = rp.position();
    let lever = skew(&local);
    let body = local_cov + lever * pose.rot_cov * lever.transpose();
    let cov = pose.rotation * body * pose.rotation.transpose() + pose.trans_cov;
    WorldPoint::new(pose.transform(&local), cov)
}
