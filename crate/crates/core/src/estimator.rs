//! Iterated-Kalman-filter MAP pose estimation: constant-velocity prior,
//! per-match observation linearization, and the Gauss-Newton solve of the
//! prior + point-to-plane cost.
//!
//! The state is an SE(3) pose with a 6×6 tangent-space covariance, blocks
//! ordered `[δθ; δt]` under the right-perturbation convention.

use crate::geom::{skew, symmetrize6, Mat3, Mat6, Pose, RowVec6, Vec3, Vec6};
use crate::matcher::{match_scan, voxel_downsample_indices, Match};
use crate::uncertainty::{local_point_cov, world_point_cov, RawPoint, SensorNoise, WorldPoint};
use crate::voxelmap::{MapConfig, UpdateReport, VoxelMap};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("degenerate geometry: normal-equation condition number {0:.3e} exceeds 1e12")]
    DegenerateGeometry(f64),
}

/// Pose belief: mean and 6×6 covariance.
#[derive(Clone, Debug)]
pub struct State {
    pub pose: Pose,
    pub cov: Mat6,
}

impl State {
    pub fn origin() -> Self {
        Self {
            pose: Pose::identity(),
            cov: Mat6::zeros(),
        }
    }

    /// Copies the diagonal covariance blocks into the pose so that world-frame
    /// point covariances can absorb the pose uncertainty.
    pub fn pose_with_covariance(&self) -> Pose {
        self.pose.clone().with_covariance(
            self.cov.fixed_view::<3, 3>(0, 0).clone_owned(),
            self.cov.fixed_view::<3, 3>(3, 3).clone_owned(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Per-axis rotational process noise added per frame (rad²).
    pub process_noise_rot: f64,
    /// Per-axis translational process noise added per frame (m²).
    pub process_noise_trans: f64,
    pub max_iterations: usize,
    /// Convergence threshold on `‖δx‖`.
    pub iteration_epsilon: f64,
    /// Re-run the matcher each iteration instead of only re-linearizing.
    pub rematch_each_iteration: bool,
    /// Process-noise multiplier applied while no velocity estimate exists
    /// yet (fewer than two past states): the first real motion can be much
    /// larger than the per-frame acceleration the constant-velocity model
    /// absorbs afterwards.
    pub bootstrap_scale: f64,
    /// Fewest matches a frame may have and still be trusted; below this the
    /// prior is kept, the frame is flagged, and nothing is inserted into the
    /// map (a handful of associations at a bad prior would otherwise drag
    /// the pose and then poison the map at the dragged pose).
    pub min_matches: usize,
    /// Floor (meters, 1σ) on the per-observation residual noise. At grazing
    /// incidence the projected sensor noise can drop to millimeters, handing
    /// individual returns 10–100× the weight of ordinary ones; unmodeled map
    /// imperfections (e.g. points near surface junctions matched to the
    /// neighbouring plane) then bias the pose estimate systematically.
    pub noise_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            process_noise_rot: 0.01f64.powi(2),
            process_noise_trans: 0.1f64.powi(2),
            max_iterations: 5,
            iteration_epsilon: 1e-6,
            rematch_each_iteration: true,
            bootstrap_scale: 25.0,
            min_matches: 20,
            noise_floor: 0.01,
        }
    }
}

impl EstimatorConfig {
    pub fn process_noise(&self) -> Mat6 {
        let mut q = Mat6::zeros();
        for i in 0..3 {
            q[(i, i)] = self.process_noise_rot;
            q[(i + 3, i + 3)] = self.process_noise_trans;
        }
        q
    }
}

/// Linearized scalar observation of one match.
#[derive(Clone, Debug)]
pub struct Observation {
    /// Residual `z = nᵀ(R̄·ᴸp + t̄ − q)`.
    pub residual: f64,
    /// `∂z/∂[δθ; δt] = [−nᵀR̄⌊ᴸp⌋∧, nᵀ]`.
    pub jacobian: RowVec6,
    /// Observation noise variance from the plane and local point covariance.
    pub noise: f64,
}

/// Constant-velocity extrapolation: repeats the last inter-frame twist and
/// inflates the covariance by the process noise. Fewer than two past states
/// fall back to an identity-motion prior.
pub fn propagate_cv(history: &[State], cfg: &EstimatorConfig) -> State {
    let q = cfg.process_noise();
    match history {
        [] => State {
            pose: Pose::identity(),
            cov: q * cfg.bootstrap_scale,
        },
        [only] => State {
            pose: only.pose.clone(),
            cov: symmetrize6(&(only.cov + q * cfg.bootstrap_scale)),
        },
        [.., prev, last] => {
            let delta = prev.pose.inverse().compose(&last.pose);
            let mut pose = last.pose.compose(&delta);
            // The double composition amplifies orthonormality round-off by
            // ~2.4× per frame; without the projection the rotation drifts
            // into a shear of >1e-2 within 40 frames and the pose estimate
            // diverges.
            pose.rotation = crate::geom::so3_project(&pose.rotation);
            State {
                pose,
                cov: symmetrize6(&(last.cov + q)),
            }
        }
    }
}

/// Linearizes a match around the current iterate `pose`.
///
/// The observation noise uses the plane covariance and the *local* point
/// covariance (the pose uncertainty is carried by the prior term, not here).
pub fn linearize(m: &Match, pose: &Pose) -> Observation {
    let n = m.plane.normal;
    let local = m.raw.position();
    let world = pose.transform(&local);
    let residual = n.dot(&(world - m.plane.point));

    let nr = pose.rotation.transpose() * n; // nᵀR̄ as a column
    let mut jacobian = RowVec6::zeros();
    let rot_block = -(nr.transpose() * skew(&local));
    jacobian.fixed_columns_mut::<3>(0).copy_from(&rot_block);
    jacobian.fixed_columns_mut::<3>(3).copy_from(&n.transpose());

    // R_i = J_v · blkdiag(Σ_nq, Σ_Lp) · J_vᵀ with
    // J_v = [(T̄ᴸp − q)ᵀ, −nᵀ, nᵀR̄].
    let diff = world - m.plane.point;
    let mut jv = Vec6::zeros();
    jv.fixed_rows_mut::<3>(0).copy_from(&diff);
    jv.fixed_rows_mut::<3>(3).copy_from(&(-n));
    let plane_term = (jv.transpose() * m.plane.cov * jv)[0];
    let point_term = (nr.transpose() * m.local_cov * nr)[0];
    let noise = (plane_term + point_term).max(crate::matcher::VARIANCE_FLOOR);

    Observation {
        residual,
        jacobian,
        noise,
    }
}

/// Outcome bookkeeping of one [`iekf_update`].
#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateInfo {
    pub iterations: usize,
    pub cost_before: f64,
    pub cost_after: f64,
}

fn map_cost(pose: &Pose, prior: &State, prior_inv: &Mat6, matches: &[Match], noises: &[f64]) -> f64 {
    let e = pose.boxminus(&prior.pose);
    let mut cost = (e.transpose() * prior_inv * e)[0];
    for (m, r) in matches.iter().zip(noises) {
        let z = m.plane.normal.dot(&(pose.transform(&m.raw.position()) - m.plane.point));
        cost += z * z / r;
    }
    cost
}

/// Huber threshold in residual sigmas. A hard-rejecting kernel (e.g. Tukey)
/// is unusable here: in a corridor nearly every residual is invariant along
/// the travel direction, so the few large-but-consistent residuals from
/// symmetry-breaking geometry carry the *entire* along-track gradient and
/// must keep linear influence rather than being cut.
const HUBER_K: f64 = 1.345;

/// Effective noise variances for the current residuals: IRLS form of the
/// Huber kernel, `r' = r / w` with `w = min(1, k / |u|)` for standardized
/// residual `u = z/σ`. Weights are refreshed every Gauss-Newton iteration,
/// so residuals that shrink as the pose converges recover full weight.
fn robust_noises(pose: &Pose, matches: &[Match], base: &[f64]) -> Vec<f64> {
    matches
        .iter()
        .zip(base)
        .map(|(m, r)| {
            let z = m
                .plane
                .normal
                .dot(&(pose.transform(&m.raw.position()) - m.plane.point));
            let u = z.abs() / r.sqrt();
            if u <= HUBER_K {
                *r
            } else {
                r * (u / HUBER_K)
            }
        })
        .collect()
}

/// Iterated Gauss-Newton solve of the MAP cost
/// `‖x ⊟ x̂‖²_P̂ + Σ ‖d_i − H_i(x ⊟ x̄)‖²_R_i`, with Huber re-weighting of
/// the measurement noises (iteratively re-weighted least squares).
///
/// Zero matches return the prior unchanged. A normal-equation condition
/// number above 1e12 reports degenerate geometry; the caller keeps the prior.
pub fn iekf_update(
    prior: &State,
    matches: &[Match],
    cfg: &EstimatorConfig,
) -> Result<(State, UpdateInfo), EstimatorError> {
    if matches.is_empty() {
        return Ok((prior.clone(), UpdateInfo::default()));
    }
    let prior_inv = prior
        .cov
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| {
            // A zero-covariance prior (first frames) gets a huge but finite
            // information weight.
            let mut p = prior.cov;
            for i in 0..6 {
                p[(i, i)] += 1e-12;
            }
            p.cholesky().expect("jittered prior covariance").inverse()
        });

    // Base noise variances frozen at the prior linearization so the cost is
    // comparable across iterations; the Huber weights on top are refreshed
    // at every linearization point.
    let floor = cfg.noise_floor * cfg.noise_floor;
    let base_noises: Vec<f64> = matches
        .iter()
        .map(|m| linearize(m, &prior.pose).noise.max(floor))
        .collect();

    let mut pose = prior.pose.clone();
    let mut info = UpdateInfo {
        cost_before: map_cost(
            &pose,
            prior,
            &prior_inv,
            matches,
            &robust_noises(&pose, matches, &base_noises),
        ),
        ..Default::default()
    };
    let mut hessian = Mat6::zeros();

    for iter in 0..cfg.max_iterations {
        info.iterations = iter + 1;
        let noises = robust_noises(&pose, matches, &base_noises);
        let mut h = prior_inv.to_owned();
        let e = pose.boxminus(&prior.pose);
        let mut g = -(prior_inv * e);
        for (m, r) in matches.iter().zip(&noises) {
            let obs = linearize(m, &pose);
            let hi = obs.jacobian;
            h += hi.transpose() * hi / *r;
            g -= hi.transpose() * (obs.residual / *r);
        }
        hessian = symmetrize6(&h);

        let eig = nalgebra::SymmetricEigen::new(hessian);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 || max / min > 1e12 {
            return Err(EstimatorError::DegenerateGeometry(max / min.max(1e-300)));
        }

        let mut delta: Vec6 = hessian
            .cholesky()
            .expect("well-conditioned normal equations")
            .solve(&g);

        // Backtrack on the true MAP cost; Gauss-Newton overshoot is rare but
        // possible far from the solution.
        let current = map_cost(&pose, prior, &prior_inv, matches, &noises);
        let mut candidate = pose.boxplus(&delta);
        let mut tries = 0;
        while map_cost(&candidate, prior, &prior_inv, matches, &noises) > current && tries < 4 {
            delta *= 0.5;
            candidate = pose.boxplus(&delta);
            tries += 1;
        }
        pose = candidate;
        if delta.norm() < cfg.iteration_epsilon {
            break;
        }
    }

    info.cost_after = map_cost(
        &pose,
        prior,
        &prior_inv,
        matches,
        &robust_noises(&pose, matches, &base_noises),
    );
    let cov = symmetrize6(
        &hessian
            .cholesky()
            .expect("well-conditioned normal equations")
            .inverse(),
    );
    Ok((State { pose, cov }, info))
}

/// Per-frame diagnostics of [`Odometry::register_scan`].
#[derive(Clone, Debug)]
pub struct FrameSummary {
    pub frame: usize,
    pub iterations: usize,
    pub matches: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub pose: Pose,
    pub map_update: UpdateReport,
    /// Set when the update was degenerate and the prior was kept.
    pub flagged: bool,
    pub match_millis: f64,
    pub update_millis: f64,
    pub insert_millis: f64,
}

impl FrameSummary {
    /// One line of structured text for the eval tooling.
    pub fn to_line(&self) -> String {
        format!(
            "frame={} iters={} matches={} cost_before={:.6e} cost_after={:.6e} flagged={} rebuilds={} match_ms={:.3} update_ms={:.3} insert_ms={:.3}",
            self.frame,
            self.iterations,
            self.matches,
            self.cost_before,
            self.cost_after,
            u8::from(self.flagged),
            self.map_update.rebuilds,
            self.match_millis,
            self.update_millis,
            self.insert_millis,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherConfig {
    /// Voxel-grid leaf for per-scan downsampling before matching; zero
    /// disables. Defaults to half the finest map leaf.
    pub downsample_leaf: f64,
}

impl MatcherConfig {
    pub fn from_map(map_cfg: &MapConfig) -> Self {
        let finest = map_cfg.voxel_size / 2f64.powi(map_cfg.max_layer as i32 - 1);
        Self {
            downsample_leaf: finest * 0.5,
        }
    }
}

/// The full per-frame odometry driver: prior propagation, matching, the iEKF
/// update, and map insertion at the posterior pose.
pub struct Odometry {
    map: VoxelMap,
    history: Vec<State>,
    noise: SensorNoise,
    est_cfg: EstimatorConfig,
    match_cfg: MatcherConfig,
    frame: usize,
}

impl Odometry {
    pub fn new(
        map_cfg: MapConfig,
        noise: SensorNoise,
        est_cfg: EstimatorConfig,
        match_cfg: MatcherConfig,
    ) -> Self {
        Self {
            map: VoxelMap::new(map_cfg),
            history: Vec::new(),
            noise,
            est_cfg,
            match_cfg,
            frame: 0,
        }
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    pub fn current_state(&self) -> Option<&State> {
        self.history.last()
    }

    /// Registers one scan. The first frame defines the world frame and only
    /// builds the map. A degenerate frame keeps the prior and inserts
    /// nothing.
    pub fn register_scan(&mut self, scan: &[RawPoint]) -> FrameSummary {
        let frame = self.frame;
        self.frame += 1;

        if self.history.is_empty() {
            let state = State::origin();
            let t0 = Instant::now();
            let world: Vec<WorldPoint> = scan
                .iter()
                .map(|rp| {
                    let local = local_point_cov(rp, &self.noise);
                    world_point_cov(rp, &local, &state.pose)
                })
                .collect();
            let report = self.map.insert(&world, &state.pose.translation);
            let insert_millis = t0.elapsed().as_secs_f64() * 1e3;
            let pose = state.pose.clone();
            self.history.push(state);
            return FrameSummary {
                frame,
                iterations: 0,
                matches: 0,
                cost_before: 0.0,
                cost_after: 0.0,
                pose,
                map_update: report,
                flagged: false,
                match_millis: 0.0,
                update_millis: 0.0,
                insert_millis,
            };
        }

        let prior = propagate_cv(&self.history, &self.est_cfg);
        let prior_pose = prior.pose_with_covariance();

        // Downsample in the sensor frame, then predict into the world with
        // the prior belief for association.
        let t0 = Instant::now();
        let positions: Vec<Vec3> = scan.iter().map(|rp| rp.position()).collect();
        let keep = voxel_downsample_indices(&positions, self.match_cfg.downsample_leaf);
        let candidates: Vec<(RawPoint, Mat3, WorldPoint)> = keep
            .iter()
            .map(|&i| {
                let rp = scan[i];
                let local = local_point_cov(&rp, &self.noise);
                let world = world_point_cov(&rp, &local, &prior_pose);
                (rp, local, world)
            })
            .collect();
        let matches = match_scan(&candidates, &self.map);
        let match_millis = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let (posterior, update_info, flagged) = if matches.len() < self.est_cfg.min_matches {
            (prior.clone(), UpdateInfo::default(), true)
        } else if self.est_cfg.rematch_each_iteration {
            self.update_with_rematch(&prior, &candidates, matches.clone())
        } else {
            match iekf_update(&prior, &matches, &self.est_cfg) {
                Ok((state, info)) => (state, info, false),
                Err(_) => (prior.clone(), UpdateInfo::default(), true),
            }
        };
        let update_millis = t1.elapsed().as_secs_f64() * 1e3;

        // Register the full scan into the map at the posterior belief.
        let t2 = Instant::now();
        let report = if flagged {
            UpdateReport::default()
        } else {
            let posterior_pose = posterior.pose_with_covariance();
            let world: Vec<WorldPoint> = scan
                .iter()
                .map(|rp| {
                    let local = local_point_cov(rp, &self.noise);
                    world_point_cov(rp, &local, &posterior_pose)
                })
                .collect();
            self.map.insert(&world, &posterior.pose.translation)
        };
        let insert_millis = t2.elapsed().as_secs_f64() * 1e3;

        let pose = posterior.pose.clone();
        let match_count = matches.len();
        self.history.push(posterior);
        // Only the last two states feed the constant-velocity prior.
        if self.history.len() > 8 {
            self.history.remove(0);
        }

        FrameSummary {
            frame,
            iterations: update_info.iterations,
            matches: match_count,
            cost_before: update_info.cost_before,
            cost_after: update_info.cost_after,
            pose,
            map_update: report,
            flagged,
            match_millis,
            update_millis,
            insert_millis,
        }
    }

    fn update_with_rematch(
        &self,
        prior: &State,
        candidates: &[(RawPoint, Mat3, WorldPoint)],
        mut matches: Vec<Match>,
    ) -> (State, UpdateInfo, bool) {
        // Outer association loop around the full inner solve. Every inner
        // solve starts from the *original* prior so the pose is never anchored
        // to an intermediate iterate: re-feeding a posterior as the next prior
        // would pin later steps under its collapsed covariance.
        let mut state = prior.clone();
        let mut info = UpdateInfo::default();
        const REMATCH_ROUNDS: usize = 3;
        for round in 0..REMATCH_ROUNDS {
            match iekf_update(prior, &matches, &self.est_cfg) {
                Ok((next, step)) => {
                    if round == 0 {
                        info.cost_before = step.cost_before;
                    }
                    info.iterations += step.iterations;
                    info.cost_after = step.cost_after;
                    let moved = next.pose.boxminus(&state.pose).norm();
                    state = next;
                    if round + 1 == REMATCH_ROUNDS
                        || (round > 0 && moved < self.est_cfg.iteration_epsilon)
                    {
                        break;
                    }
                    // Gate with the prior uncertainty: the posterior
                    // covariance has collapsed and would cut off correct
                    // associations that are still far away.
                    let pose = state.pose.clone().with_covariance(
                        prior.cov.fixed_view::<3, 3>(0, 0).clone_owned(),
                        prior.cov.fixed_view::<3, 3>(3, 3).clone_owned(),
                    );
                    let repredicted: Vec<(RawPoint, Mat3, WorldPoint)> = candidates
                        .iter()
                        .map(|(raw, local, _)| {
                            (*raw, *local, world_point_cov(raw, local, &pose))
                        })
                        .collect();
                    matches = match_scan(&repredicted, &self.map);
                }
                Err(_) => return (prior.clone(), UpdateInfo::default(), true),
            }
        }
        (state, info, false)
    }
}
