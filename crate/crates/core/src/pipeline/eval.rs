//! Trajectory evaluation: rigid alignment on the leading segment, absolute
//! translation error over the whole run, and start/end loop drift.

use crate::geom::{Mat3, Pose, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory length mismatch: estimate has {est} poses, reference {reference}")]
    LengthMismatch { est: usize, reference: usize },
    #[error("alignment needs at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Minimum poses the alignment segment must contain.
pub const MIN_ALIGN_POSES: usize = 5;

#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Root-mean-square translation error after alignment (m).
    pub rmse: f64,
    pub mean_error: f64,
    pub max_error: f64,
    /// Poses used to solve the alignment (the leading 20%, at least
    /// [`MIN_ALIGN_POSES`]).
    pub aligned_poses: usize,
    /// Translation distance between first and last estimated pose, after
    /// subtracting the same gap in the reference (m). Zero-loop references
    /// make this the raw closure drift.
    pub loop_drift: f64,
}

/// Closed-form least-squares rotation+translation mapping `src` onto `dst`
/// (Kabsch/Umeyama without scale).
pub fn rigid_align(src: &[Vec3], dst: &[Vec3]) -> Pose {
    assert_eq!(src.len(), dst.len());
    assert!(!src.is_empty());
    let n = src.len() as f64;
    let cs: Vec3 = src.iter().sum::<Vec3>() / n;
    let cd: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd");
    let vt = svd.v_t.expect("svd");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut flip = Mat3::identity();
        flip[(2, 2)] = -1.0;
        r = u * flip * vt;
    }
    Pose::new(r, cd - r * cs)
}

/// Aligns the estimate to the reference on the leading 20% of poses and
/// reports translation error statistics over the full trajectory.
pub fn evaluate(estimate: &[Pose], reference: &[Pose]) -> Result<EvalReport, EvalError> {
    if estimate.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            est: estimate.len(),
            reference: reference.len(),
        });
    }
    let segment = (estimate.len() / 5).max(MIN_ALIGN_POSES);
    if estimate.len() < segment {
        return Err(EvalError::TooShort {
            needed: MIN_ALIGN_POSES,
            got: estimate.len(),
        });
    }

    let src: Vec<Vec3> = estimate[..segment].iter().map(|p| p.translation).collect();
    let dst: Vec<Vec3> = reference[..segment].iter().map(|p| p.translation).collect();
    let align = rigid_align(&src, &dst);

    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut max_error: f64 = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let err = (align.transform(&e.translation) - r.translation).norm();
        sq_sum += err * err;
        abs_sum += err;
        max_error = max_error.max(err);
    }
    let n = estimate.len() as f64;

    let est_gap = (estimate.last().unwrap().translation - estimate[0].translation).norm();
    let ref_gap = (reference.last().unwrap().translation - reference[0].translation).norm();

    Ok(EvalReport {
        rmse: (sq_sum / n).sqrt(),
        mean_error: abs_sum / n,
        max_error,
        aligned_poses: segment,
        loop_drift: (est_gap - ref_gap).abs(),
    })
}
