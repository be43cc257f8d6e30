//! Small fixed-size linear algebra helpers and the SO(3)/SE(3) machinery the
//! rest of the crate builds on.
//!
//! Rotation perturbations are right-multiplicative throughout: a pose `(R, t)`
//! perturbed by a tangent vector `[δθ; δt]` becomes `(R·exp(⌊δθ⌋), t + δt)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat3x2 = SMatrix<f64, 3, 2>;
pub type RowVec6 = SMatrix<f64, 1, 6>;

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Exact symmetrization `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize6(m: &Mat6) -> Mat6 {
    (m + m.transpose()) * 0.5
}

/// Rodrigues formula with a second-order Taylor fallback near zero.
pub fn so3_exp(theta: &Vec3) -> Mat3 {
    let angle = theta.norm();
    let k = skew(theta);
    if angle < 1e-8 {
        Mat3::identity() + k + k * k * 0.5
    } else {
        let a = angle.sin() / angle;
        let b = (1.0 - angle.cos()) / (angle * angle);
        Mat3::identity() + k * a + k * k * b
    }
}

/// Inverse of [`so3_exp`]; the returned vector has norm in `[0, π]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let vee = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    if angle < 1e-8 {
        return vee;
    }
    if angle > std::f64::consts::PI - 1e-6 {
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part R + I = 2(cos θ I + (1 - cos θ) aaᵀ) - ...
        let s = (r + Mat3::identity()) * 0.5;
        let mut axis = Vec3::zeros();
        let diag = Vec3::new(s[(0, 0)], s[(1, 1)], s[(2, 2)]);
        let imax = diag.imax();
        let col = s.column(imax);
        let norm = col[imax].max(0.0).sqrt();
        if norm > 0.0 {
            axis = Vec3::new(col[0], col[1], col[2]) / norm;
        }
        // Fix the sign using the (possibly tiny) antisymmetric part.
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    vee * (angle / angle.sin())
}

/// Nearest rotation matrix in the Frobenius sense, `R = U·Vᵀ` from the SVD
/// with the determinant corrected to +1.
///
/// Long compose chains need this: the constant-velocity extrapolation
/// `R_last·(R_prevᵀ·R_last)` roughly *doubles* any orthonormality defect per
/// frame, so even machine-epsilon round-off grows past 1e-2 within ~40 frames
/// and the matrix silently stops being a rotation.
pub fn so3_project(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let mut u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    u * v_t
}

/// Eigendecomposition of a symmetric 3×3 matrix.
#[derive(Clone, Debug)]
pub struct Eigen3 {
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Mat3,
    /// Eigenvalues in descending order: `values[0] ≥ values[1] ≥ values[2]`.
    pub values: Vec3,
}

/// Symmetric 3×3 eigendecomposition with descending eigenvalues and a
/// deterministic sign convention (largest-magnitude component positive).
///
/// The input is symmetrized internally.
pub fn sym_eigen3(a: &Mat3) -> Eigen3 {
    let se = symmetrize(a).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vectors = Mat3::zeros();
    let mut values = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = se.eigenvalues[src];
        let mut v: Vec3 = se.eigenvectors.column(src).into();
        let imax = v.abs().imax();
        if v[imax] < 0.0 {
            v = -v;
        }
        vectors.set_column(dst, &v);
    }
    Eigen3 { vectors, values }
}

/// Rigid pose with tangent-space covariance blocks.
///
/// `rot_cov` lives in the body tangent space under the right-perturbation
/// convention; `trans_cov` is the translation covariance in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub rot_cov: Mat3,
    pub trans_cov: Mat3,
}

impl Pose {
    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    /// Pose with zero covariance.
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
            rot_cov: Mat3::zeros(),
            trans_cov: Mat3::zeros(),
        }
    }

    pub fn with_covariance(mut self, rot_cov: Mat3, trans_cov: Mat3) -> Self {
        self.rot_cov = symmetrize(&rot_cov);
        self.trans_cov = symmetrize(&trans_cov);
        self
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Inverse rigid transform; covariance blocks are dropped.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Rigid composition `self ∘ other`; covariance blocks are dropped.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Right-perturbation retraction: `(R·exp(⌊δθ⌋), t + δt)`.
    pub fn boxplus(&self, delta: &Vec6) -> Pose {
        let dtheta = Vec3::new(delta[0], delta[1], delta[2]);
        let dt = Vec3::new(delta[3], delta[4], delta[5]);
        Pose {
            rotation: self.rotation * so3_exp(&dtheta),
            translation: self.translation + dt,
            rot_cov: self.rot_cov,
            trans_cov: self.trans_cov,
        }
    }

    /// Inverse of [`Pose::boxplus`]: `self ⊟ other = [log(R_oᵀ R); t − t_o]`.
    pub fn boxminus(&self, other: &Pose) -> Vec6 {
        let dtheta = so3_log(&(other.rotation.transpose() * self.rotation));
        let dt = self.translation - other.translation;
        Vec6::new(dtheta.x, dtheta.y, dtheta.z, dt.x, dt.y, dt.z)
    }

    /// Max-norm of `RᵀR − I`; used by validity checks and tests.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity())
            .abs()
            .max()
    }
}
