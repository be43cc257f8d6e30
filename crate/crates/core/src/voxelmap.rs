//! Coarse-to-fine adaptive voxel map: a spatial hash over root voxels, each
//! holding an octree whose nodes either store a plane feature, subdivide, or
//! buffer points until a decision is possible.
//!
//! Iteration over roots is always key-sorted so identical point streams
//! produce identical maps regardless of hash iteration order.

use crate::geom::Vec3;
use crate::plane::{fit_feature, fit_plane, orient_normal, PlaneFeature};
use crate::uncertainty::WorldPoint;
use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("non-finite point coordinate ({0}, {1}, {2})")]
    NonFinitePoint(f64, f64, f64),
}

/// Signed lattice coordinates of a root voxel: `floor(p / V_max)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

/// Floor-division key derivation, correct for negative coordinates.
pub fn hash_key(p: &Vec3, voxel_size: f64) -> Result<VoxelKey, MapError> {
    debug_assert!(voxel_size > 0.0);
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(MapError::NonFinitePoint(p.x, p.y, p.z));
    }
    Ok(VoxelKey {
        x: (p.x / voxel_size).floor() as i64,
        y: (p.y / voxel_size).floor() as i64,
        z: (p.z / voxel_size).floor() as i64,
    })
}

/// Minimum in-plane variance (λ₂, m²) a recent-point refit must exhibit
/// before its normal is trusted enough to count toward a rebuild. A batch of
/// recent returns spread over only a few centimeters has an essentially
/// arbitrary normal even when perfectly flat.
const MIN_REBUILD_SPREAD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct MapConfig {
    /// Root voxel edge length `V_max` (meters).
    pub voxel_size: f64,
    /// Deepest octree layer `L_max`; the root is layer 1.
    pub max_layer: u32,
    /// Plane judgment threshold on λ₃ (m²).
    pub plane_threshold: f64,
    /// Minimum points before a node is judged at all.
    pub min_points: usize,
    /// Point count at which a plane's parameters freeze.
    pub converge_points: usize,
    /// Recent points retained by a converged plane.
    pub recent_points: usize,
    /// Normal-change angle (radians) counted toward a rebuild.
    pub rebuild_angle: f64,
    /// Consecutive over-angle refits required to trigger a rebuild.
    pub rebuild_streak: u32,
    /// Per-node point buffer cap before convergence.
    pub max_buffer: usize,
    /// Expand queries to the six face-adjacent roots.
    pub query_adjacent: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 2.0,
            max_layer: 3,
            plane_threshold: 0.01,
            min_points: 10,
            converge_points: 50,
            recent_points: 10,
            rebuild_angle: 10f64.to_radians(),
            rebuild_streak: 3,
            max_buffer: 1000,
            query_adjacent: false,
        }
    }
}

/// A plane-holding leaf together with its update bookkeeping.
#[derive(Clone, Debug)]
pub struct PlaneNode {
    pub feature: PlaneFeature,
    /// Full point buffer while unconverged; emptied at convergence.
    buffer: Vec<WorldPoint>,
    /// Rolling buffer of the latest points after convergence.
    recent: Vec<WorldPoint>,
    mismatch_streak: u32,
}

#[derive(Clone, Debug)]
pub enum NodeContent {
    /// Too few points to judge planarity.
    Points(Vec<WorldPoint>),
    Plane(PlaneNode),
    Children([Option<Box<OctreeNode>>; 8]),
    /// Non-planar at the deepest layer.
    Exhausted(Vec<WorldPoint>),
}

#[derive(Clone, Debug)]
pub struct OctreeNode {
    pub layer: u32,
    pub center: Vec3,
    pub half_extent: f64,
    pub content: NodeContent,
}

/// Per-`insert` bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub new_roots: usize,
    pub points_inserted: usize,
    pub rebuilds: usize,
}

/// Aggregate counters, keyed by octree layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapStats {
    /// (layer, voxel edge length, plane count), ascending by layer.
    pub planes_per_layer: Vec<(u32, f64, usize)>,
    pub total_planes: usize,
    pub converged_planes: usize,
    pub buffered_points: usize,
    pub root_count: usize,
}

#[derive(Clone, Debug)]
pub struct VoxelMap {
    cfg: MapConfig,
    roots: HashMap<VoxelKey, OctreeNode>,
}

impl VoxelMap {
    pub fn new(cfg: MapConfig) -> Self {
        Self {
            cfg,
            roots: HashMap::new(),
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.cfg
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn root_count(&self) -> usize {
        self.roots.len()
    }

    /// Builds a map from scratch; `origin` is the observing sensor position
    /// used to orient plane normals.
    pub fn build(points: &[WorldPoint], origin: &Vec3, cfg: MapConfig) -> Self {
        let mut map = Self::new(cfg);
        map.insert(points, origin);
        map
    }

    /// Registers new world points. Unpopulated roots are constructed;
    /// populated nodes refit, converge, or trigger change-driven rebuilds.
    pub fn insert(&mut self, points: &[WorldPoint], origin: &Vec3) -> UpdateReport {
        let mut report = UpdateReport::default();
        let mut grouped: BTreeMap<VoxelKey, Vec<WorldPoint>> = BTreeMap::new();
        for p in points {
            match hash_key(&p.position, self.cfg.voxel_size) {
                Ok(key) => grouped.entry(key).or_default().push(*p),
                Err(_) => continue,
            }
        }
        for (key, pts) in grouped {
            report.points_inserted += pts.len();
            if let Some(root) = self.roots.get_mut(&key) {
                insert_into_node(root, pts, origin, &self.cfg, &mut report);
            } else {
                let center = Vec3::new(
                    (key.x as f64 + 0.5) * self.cfg.voxel_size,
                    (key.y as f64 + 0.5) * self.cfg.voxel_size,
                    (key.z as f64 + 0.5) * self.cfg.voxel_size,
                );
                let node = make_node(1, center, self.cfg.voxel_size * 0.5, pts, origin, &self.cfg);
                self.roots.insert(key, node);
                report.new_roots += 1;
            }
        }
        report
    }

    /// Every plane stored anywhere in the root voxel containing `p`, plus
    /// the six face-adjacent roots when configured. Order is deterministic
    /// (own root first, then −x, +x, −y, +y, −z, +z neighbour).
    pub fn query(&self, p: &Vec3) -> Vec<&PlaneFeature> {
        let mut out = Vec::new();
        let Ok(key) = hash_key(p, self.cfg.voxel_size) else {
            return out;
        };
        if let Some(root) = self.roots.get(&key) {
            collect_planes(root, &mut out);
        }
        if self.cfg.query_adjacent {
            for (dx, dy, dz) in [
                (-1, 0, 0),
                (1, 0, 0),
                (0, -1, 0),
                (0, 1, 0),
                (0, 0, -1),
                (0, 0, 1),
            ] {
                let neighbour = VoxelKey {
                    x: key.x + dx,
                    y: key.y + dy,
                    z: key.z + dz,
                };
                if let Some(root) = self.roots.get(&neighbour) {
                    collect_planes(root, &mut out);
                }
            }
        }
        out
    }

    /// Every plane stored anywhere in the root voxel `key`.
    pub fn root_planes(&self, key: &VoxelKey) -> Vec<&PlaneFeature> {
        let mut out = Vec::new();
        if let Some(root) = self.roots.get(key) {
            collect_planes(root, &mut out);
        }
        out
    }

    /// Visits every node (planar or not) in key-sorted, depth-first order.
    pub fn visit_all(&self, f: &mut impl FnMut(&OctreeNode)) {
        let mut keys: Vec<&VoxelKey> = self.roots.keys().collect();
        keys.sort();
        for key in keys {
            visit_nodes(&self.roots[key], f);
        }
    }

    /// Iterates every plane in the map in key-sorted, depth-first order.
    pub fn planes(&self) -> Vec<(&VoxelKey, &OctreeNode, &PlaneFeature)> {
        let mut keys: Vec<&VoxelKey> = self.roots.keys().collect();
        keys.sort();
        let mut out = Vec::new();
        for key in keys {
            let root = &self.roots[key];
            collect_plane_nodes(root, &mut |node, feature| out.push((key, node, feature)));
        }
        out
    }

    pub fn stats(&self) -> MapStats {
        let mut per_layer: BTreeMap<u32, usize> = BTreeMap::new();
        let mut stats = MapStats {
            root_count: self.roots.len(),
            ..Default::default()
        };
        let mut keys: Vec<&VoxelKey> = self.roots.keys().collect();
        keys.sort();
        for key in keys {
            visit_nodes(&self.roots[key], &mut |node| match &node.content {
                NodeContent::Plane(pn) => {
                    *per_layer.entry(node.layer).or_default() += 1;
                    stats.total_planes += 1;
                    if pn.feature.converged {
                        stats.converged_planes += 1;
                    }
                    stats.buffered_points += pn.buffer.len() + pn.recent.len();
                }
                NodeContent::Points(buf) | NodeContent::Exhausted(buf) => {
                    stats.buffered_points += buf.len();
                }
                NodeContent::Children(_) => {}
            });
        }
        stats.planes_per_layer = per_layer
            .into_iter()
            .map(|(layer, count)| {
                (
                    layer,
                    self.cfg.voxel_size / 2f64.powi(layer as i32 - 1),
                    count,
                )
            })
            .collect();
        stats
    }

    /// Line-oriented text dump, one plane per line:
    /// `layer cx cy cz nx ny nz qx qy qz lambda3 normal_cov_trace converged`.
    pub fn dump(&self, w: &mut impl Write) -> io::Result<()> {
        for (_, node, feature) in self.planes() {
            writeln!(
                w,
                "{} {} {} {} {} {} {} {} {} {} {} {} {}",
                node.layer,
                node.center.x,
                node.center.y,
                node.center.z,
                feature.normal.x,
                feature.normal.y,
                feature.normal.z,
                feature.point.x,
                feature.point.y,
                feature.point.z,
                feature.fit.lambda3(),
                feature.normal_cov_trace(),
                u8::from(feature.converged),
            )?;
        }
        Ok(())
    }
}

fn collect_planes<'a>(node: &'a OctreeNode, out: &mut Vec<&'a PlaneFeature>) {
    match &node.content {
        NodeContent::Plane(pn) => out.push(&pn.feature),
        NodeContent::Children(children) => {
            for child in children.iter().flatten() {
                collect_planes(child, out);
            }
        }
        _ => {}
    }
}

fn collect_plane_nodes<'a>(
    node: &'a OctreeNode,
    f: &mut impl FnMut(&'a OctreeNode, &'a PlaneFeature),
) {
    match &node.content {
        NodeContent::Plane(pn) => f(node, &pn.feature),
        NodeContent::Children(children) => {
            for child in children.iter().flatten() {
                collect_plane_nodes(child, f);
            }
        }
        _ => {}
    }
}

fn visit_nodes<'a>(node: &'a OctreeNode, f: &mut impl FnMut(&'a OctreeNode)) {
    f(node);
    if let NodeContent::Children(children) = &node.content {
        for child in children.iter().flatten() {
            visit_nodes(child, f);
        }
    }
}

fn octant_index(center: &Vec3, p: &Vec3) -> usize {
    (usize::from(p.x >= center.x))
        | (usize::from(p.y >= center.y) << 1)
        | (usize::from(p.z >= center.z) << 2)
}

fn octant_center(center: &Vec3, half: f64, idx: usize) -> Vec3 {
    let q = half * 0.5;
    Vec3::new(
        center.x + if idx & 1 != 0 { q } else { -q },
        center.y + if idx & 2 != 0 { q } else { -q },
        center.z + if idx & 4 != 0 { q } else { -q },
    )
}

/// Trims a pre-convergence buffer to the cap, keeping the newest points.
fn cap_buffer(buf: &mut Vec<WorldPoint>, cap: usize) {
    if buf.len() > cap {
        buf.drain(..buf.len() - cap);
    }
}

fn make_node(
    layer: u32,
    center: Vec3,
    half_extent: f64,
    points: Vec<WorldPoint>,
    origin: &Vec3,
    cfg: &MapConfig,
) -> OctreeNode {
    let content = decide(layer, &center, half_extent, points, origin, cfg);
    OctreeNode {
        layer,
        center,
        half_extent,
        content,
    }
}

/// The per-node decision of coarse-to-fine construction: judge planarity,
/// subdivide, or give up at the deepest layer.
fn decide(
    layer: u32,
    center: &Vec3,
    half_extent: f64,
    mut points: Vec<WorldPoint>,
    origin: &Vec3,
    cfg: &MapConfig,
) -> NodeContent {
    cap_buffer(&mut points, cfg.max_buffer);
    if points.len() < cfg.min_points {
        return NodeContent::Points(points);
    }
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let planar = match fit_plane(&positions) {
        Ok(fit) => fit.lambda3() < cfg.plane_threshold,
        Err(_) => false,
    };
    if planar {
        // The Jacobian chain can still reject a collinear/degenerate scatter.
        if let Ok(mut feature) = fit_feature(&points, origin) {
            let converged = points.len() >= cfg.converge_points;
            feature.converged = converged;
            return NodeContent::Plane(PlaneNode {
                feature,
                buffer: if converged { Vec::new() } else { points },
                recent: Vec::new(),
                mismatch_streak: 0,
            });
        }
    }
    if layer < cfg.max_layer {
        let mut octants: [Vec<WorldPoint>; 8] = Default::default();
        for p in points {
            octants[octant_index(center, &p.position)].push(p);
        }
        let mut children: [Option<Box<OctreeNode>>; 8] = Default::default();
        for (idx, pts) in octants.into_iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let child_center = octant_center(center, half_extent, idx);
            children[idx] = Some(Box::new(make_node(
                layer + 1,
                child_center,
                half_extent * 0.5,
                pts,
                origin,
                cfg,
            )));
        }
        NodeContent::Children(children)
    } else {
        NodeContent::Exhausted(points)
    }
}

/// Flips a refit feature onto the hemisphere of the previous normal, keeping
/// the covariance consistent (the n/q cross blocks change sign with n).
fn align_hemisphere(feature: &mut PlaneFeature, previous: &Vec3) {
    if feature.normal.dot(previous) < 0.0 {
        feature.normal = -feature.normal;
        let nq = feature.cov.fixed_view::<3, 3>(0, 3).clone_owned();
        feature.cov.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-nq));
        feature
            .cov
            .fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-nq.transpose()));
    }
}

fn insert_into_node(
    node: &mut OctreeNode,
    points: Vec<WorldPoint>,
    origin: &Vec3,
    cfg: &MapConfig,
    report: &mut UpdateReport,
) {
    let content = std::mem::replace(&mut node.content, NodeContent::Points(Vec::new()));
    node.content = match content {
        NodeContent::Points(mut buf) | NodeContent::Exhausted(mut buf) => {
            buf.extend(points);
            decide(node.layer, &node.center, node.half_extent, buf, origin, cfg)
        }
        NodeContent::Plane(mut pn) if !pn.feature.converged => {
            pn.buffer.extend(points);
            let previous = pn.feature.normal;
            let mut content = decide(
                node.layer,
                &node.center,
                node.half_extent,
                std::mem::take(&mut pn.buffer),
                origin,
                cfg,
            );
            if let NodeContent::Plane(new_pn) = &mut content {
                align_hemisphere(&mut new_pn.feature, &previous);
            }
            content
        }
        NodeContent::Plane(mut pn) => {
            // Converged: keep only the latest points and watch for a
            // persistent normal change.
            pn.recent.extend(points);
            cap_buffer(&mut pn.recent, cfg.recent_points);
            let mut rebuilt = None;
            if pn.recent.len() >= cfg.recent_points {
                let positions: Vec<Vec3> = pn.recent.iter().map(|p| p.position).collect();
                if let Ok(fit) = fit_plane(&positions) {
                    // The refit normal only means something when the recent
                    // points form a planar patch whose in-plane spread is
                    // well above its thickness; a sliver of close-range
                    // returns has an arbitrary normal and must not demolish
                    // a converged plane.
                    let lambda2 = fit.eigen.values[1];
                    let reliable = fit.lambda3() < cfg.plane_threshold
                        && lambda2 > 50.0 * (fit.lambda3() + 1e-6)
                        && lambda2 > MIN_REBUILD_SPREAD;
                    let fresh = orient_normal(&fit, origin);
                    let angle = fresh.dot(&pn.feature.normal).abs().clamp(0.0, 1.0).acos();
                    if reliable && angle > cfg.rebuild_angle {
                        pn.mismatch_streak += 1;
                    } else if reliable {
                        pn.mismatch_streak = 0;
                    }
                    if pn.mismatch_streak >= cfg.rebuild_streak {
                        report.rebuilds += 1;
                        rebuilt = Some(decide(
                            node.layer,
                            &node.center,
                            node.half_extent,
                            std::mem::take(&mut pn.recent),
                            origin,
                            cfg,
                        ));
                    }
                }
            }
            rebuilt.unwrap_or(NodeContent::Plane(pn))
        }
        NodeContent::Children(mut children) => {
            let mut octants: [Vec<WorldPoint>; 8] = Default::default();
            for p in points {
                octants[octant_index(&node.center, &p.position)].push(p);
            }
            for (idx, pts) in octants.into_iter().enumerate() {
                if pts.is_empty() {
                    continue;
                }
                match &mut children[idx] {
                    Some(child) => insert_into_node(child, pts, origin, cfg, report),
                    slot @ None => {
                        let child_center = octant_center(&node.center, node.half_extent, idx);
                        *slot = Some(Box::new(make_node(
                            node.layer + 1,
                            child_center,
                            node.half_extent * 0.5,
                            pts,
                            origin,
                            cfg,
                        )));
                    }
                }
            }
            NodeContent::Children(children)
        }
    };
}
