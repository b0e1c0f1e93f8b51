//! Motion reconstruction: turning a noisy human trajectory segment into a
//! stable one (`S_hat = F_R(S)`).
//!
//! [`MotionReconstructor`] is the interface the reward pipeline calls. Two
//! implementations ship: [`IdentityReconstructor`], and [`BalanceProjector`],
//! a deterministic reference that clamps joint rotations to their limits,
//! shifts the root so the center of mass sits over the support polygon,
//! smooths joint rotations over time and projects once more.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation;
use crate::skeleton::{
    center_of_mass, forward_kinematics_unchecked, zero_pose, JointKind, JointPose, JointRotation, Pose,
    SkeletonSpec, TrajectorySegment,
};

pub type Point2 = Vector2<f64>;

/// Vertices used to approximate the disc around each foot joint.
pub const FOOT_DISC_VERTICES: usize = 16;

/// Segment lengths a reconstructor accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capability {
    pub min_length: usize,
    pub max_length: usize,
}

/// A pure mapping from a human trajectory segment to a stabilized one.
///
/// Implementations must not keep mutable state across calls; the trainer may
/// stabilize several segments concurrently.
pub trait MotionReconstructor: Send + Sync {
    fn name(&self) -> &str;

    fn capability(&self) -> Capability;

    /// Called by [`reconstruct`] once the length and finiteness checks passed.
    fn reconstruct_checked(&self, segment: &TrajectorySegment) -> Result<TrajectorySegment>;
}

/// Runs `r` on `segment` after checking the capability contract.
pub fn reconstruct(r: &dyn MotionReconstructor, segment: &TrajectorySegment) -> Result<TrajectorySegment> {
    let cap = r.capability();
    if segment.len() < cap.min_length || segment.len() > cap.max_length {
        return Err(Error::Contract(format!(
            "{} accepts segments of {}..={} frames, got {}",
            r.name(),
            cap.min_length,
            cap.max_length,
            segment.len()
        )));
    }
    if let Some(i) = segment.poses().iter().position(|p| !p.is_finite()) {
        return Err(Error::Input(format!("frame {i} holds non-finite values")));
    }
    let out = r.reconstruct_checked(segment)?;
    if out.len() != segment.len() {
        return Err(Error::Contract(format!(
            "{} returned {} frames for a {}-frame segment",
            r.name(),
            out.len(),
            segment.len()
        )));
    }
    Ok(out)
}

/// Like [`reconstruct`], but a segment shorter than the reconstructor's
/// minimum is first padded by repeating its last frame; the padded frames are
/// dropped from the result.
pub fn reconstruct_padded(r: &dyn MotionReconstructor, segment: &TrajectorySegment) -> Result<TrajectorySegment> {
    let min = r.capability().min_length;
    if segment.len() >= min {
        return reconstruct(r, segment);
    }
    let mut poses = segment.poses().to_vec();
    let last = poses.last().expect("segments are non-empty").clone();
    poses.resize(min, last);
    let mut out = reconstruct(r, &TrajectorySegment::new(poses)?)?.into_poses();
    out.truncate(segment.len());
    TrajectorySegment::new(out)
}

/// Returns its input unchanged.
#[derive(Clone, Debug)]
pub struct IdentityReconstructor {
    max_length: usize,
}

impl IdentityReconstructor {
    pub fn new(max_length: usize) -> Self {
        Self { max_length }
    }
}

impl MotionReconstructor for IdentityReconstructor {
    fn name(&self) -> &str {
        "identity"
    }

    fn capability(&self) -> Capability {
        Capability {
            min_length: 1,
            max_length: self.max_length,
        }
    }

    fn reconstruct_checked(&self, segment: &TrajectorySegment) -> Result<TrajectorySegment> {
        Ok(segment.clone())
    }
}

/// Convex polygon on the ground plane, counterclockwise.
///
/// One vertex is a point and two vertices a segment; both are valid.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportPolygon {
    vertices: Vec<Point2>,
}

impl SupportPolygon {
    /// Convex hull of `points` (monotone chain); collinear points are dropped.
    pub fn hull(points: &[Point2]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Structural("support polygon of no points".into()));
        }
        let mut pts: Vec<Point2> = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
        if pts.len() < 3 {
            return Ok(Self { vertices: pts });
        }
        let mut lower: Vec<Point2> = Vec::new();
        for p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 1e-15 {
                lower.pop();
            }
            lower.push(*p);
        }
        let mut upper: Vec<Point2> = Vec::new();
        for p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 1e-15 {
                upper.pop();
            }
            upper.push(*p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Ok(Self { vertices: lower })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn centroid(&self) -> Point2 {
        self.vertices.iter().sum::<Point2>() / self.vertices.len() as f64
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - a.y * b.x
            })
            .sum::<f64>()
            / 2.0
    }

    /// Nearest point of the polygon (boundary or interior) to `p`.
    pub fn closest_point(&self, p: Point2) -> Point2 {
        let v = &self.vertices;
        match v.len() {
            1 => return v[0],
            2 => return closest_on_segment(v[0], v[1], p),
            _ => {}
        }
        let n = v.len();
        if (0..n).all(|i| cross(v[i], v[(i + 1) % n], p) >= 0.0) {
            return p;
        }
        (0..n)
            .map(|i| closest_on_segment(v[i], v[(i + 1) % n], p))
            .min_by(|a, b| (a - p).norm_squared().total_cmp(&(b - p).norm_squared()))
            .expect("polygon has vertices")
    }

    /// Euclidean distance from `p` to the polygon; zero inside.
    pub fn distance_outside(&self, p: Point2) -> f64 {
        (self.closest_point(p) - p).norm()
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        self.distance_outside(p) <= tol
    }

    /// The polygon eroded by `margin`: every edge moves inward by `margin`.
    ///
    /// When nothing remains (or the polygon has no area) the centroid is returned.
    pub fn shrink(&self, margin: f64) -> Self {
        if margin <= 0.0 {
            return self.clone();
        }
        let n = self.vertices.len();
        if n < 3 {
            return Self {
                vertices: vec![self.centroid()],
            };
        }
        let mut poly = self.vertices.clone();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let d = (b - a).normalize();
            let inward = Point2::new(-d.y, d.x);
            let offset = inward.dot(&a) + margin;
            poly = clip_half_plane(&poly, inward, offset);
            if poly.is_empty() {
                break;
            }
        }
        match Self::hull(&poly) {
            Ok(p) if p.vertices.len() >= 1 => p,
            _ => Self {
                vertices: vec![self.centroid()],
            },
        }
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn closest_on_segment(a: Point2, b: Point2, p: Point2) -> Point2 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Sutherland-Hodgman step keeping `{x : n.x >= offset}`.
fn clip_half_plane(poly: &[Point2], n: Point2, offset: f64) -> Vec<Point2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for i in 0..m {
        let (cur, next) = (poly[i], poly[(i + 1) % m]);
        let (dc, dn) = (n.dot(&cur) - offset, n.dot(&next) - offset);
        if dc >= 0.0 {
            out.push(cur);
        }
        if (dc >= 0.0) != (dn >= 0.0) {
            let t = dc / (dc - dn);
            out.push(cur + (next - cur) * t);
        }
    }
    out
}

/// Convex hull of the ground projections of the foot joints, each inflated
/// to a disc of radius `foot_extent` (approximated by a regular polygon).
pub fn support_polygon(skeleton: &SkeletonSpec, joint_poses: &[JointPose], foot_extent: f64) -> Result<SupportPolygon> {
    if joint_poses.len() != skeleton.len() {
        return Err(Error::Structural(format!(
            "{} joint poses for a skeleton of {} joints",
            joint_poses.len(),
            skeleton.len()
        )));
    }
    let mut points = Vec::new();
    for &f in skeleton.foot_joints() {
        let c = Point2::new(joint_poses[f].position.x, joint_poses[f].position.y);
        if foot_extent > 0.0 {
            for k in 0..FOOT_DISC_VERTICES {
                let a = std::f64::consts::TAU * k as f64 / FOOT_DISC_VERTICES as f64;
                points.push(c + Point2::new(a.cos(), a.sin()) * foot_extent);
            }
        } else {
            points.push(c);
        }
    }
    SupportPolygon::hull(&points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructorKind {
    Reference,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizerConfig {
    pub reconstructor: ReconstructorKind,
    /// Frames per smoothing block; odd.
    pub smoothing_window: usize,
    /// Meters the support polygon is eroded by before the balance test.
    pub com_margin: f64,
    /// Upper bound on the horizontal root shift applied to one frame, meters.
    pub max_root_correction: f64,
    /// Radius of the disc around each foot joint, meters.
    pub foot_extent: f64,
    /// Shortest segment the reference reconstructor accepts.
    pub min_length: usize,
    /// Per-joint `[min, max]` radians, overriding the skeleton's limits.
    pub joint_limits: BTreeMap<String, [f64; 2]>,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        Self {
            reconstructor: ReconstructorKind::Reference,
            smoothing_window: 5,
            com_margin: 0.02,
            max_root_correction: 0.5,
            foot_extent: 0.08,
            min_length: 8,
            joint_limits: BTreeMap::new(),
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::Config(format!(
                "stabilizer.smoothing_window must be an odd integer >= 1, got {}",
                self.smoothing_window
            )));
        }
        if !(self.com_margin >= 0.0) {
            return Err(Error::Config("stabilizer.com_margin must be >= 0".into()));
        }
        if !(self.max_root_correction > 0.0) || !self.max_root_correction.is_finite() {
            return Err(Error::Config("stabilizer.max_root_correction must be > 0".into()));
        }
        if !(self.foot_extent >= 0.0) {
            return Err(Error::Config("stabilizer.foot_extent must be >= 0".into()));
        }
        if self.min_length == 0 {
            return Err(Error::Config("stabilizer.min_length must be >= 1".into()));
        }
        for (name, [lo, hi]) in &self.joint_limits {
            if !(lo <= hi) {
                return Err(Error::Config(format!("stabilizer.joint_limits.{name}: min exceeds max")));
            }
        }
        Ok(())
    }

    /// Builds the configured reconstructor for `skeleton`.
    pub fn build(&self, skeleton: Arc<SkeletonSpec>, max_length: usize) -> Result<Arc<dyn MotionReconstructor>> {
        Ok(match self.reconstructor {
            ReconstructorKind::Identity => Arc::new(IdentityReconstructor::new(max_length)),
            ReconstructorKind::Reference => Arc::new(BalanceProjector::new(skeleton, self, max_length)?),
        })
    }
}

/// Moves the root horizontally so the CoM ground projection lands in `shrunk`,
/// by at most `cap` meters. Returns the pose and the applied shift.
fn project_with_shrunk(skeleton: &SkeletonSpec, pose: &Pose, shrunk: &SupportPolygon, cap: f64) -> (Pose, f64) {
    let com = center_of_mass(skeleton, &forward_kinematics_unchecked(skeleton, pose)).expect("consistent pose");
    let p = Point2::new(com.x, com.y);
    let target = shrunk.closest_point(p);
    let mut shift = target - p;
    let d = shift.norm();
    if d == 0.0 {
        return (pose.clone(), 0.0);
    }
    if d > cap {
        shift *= cap / d;
    }
    let mut out = pose.clone();
    out.root_translation.x += shift.x;
    out.root_translation.y += shift.y;
    (out, shift.norm())
}

/// One frame of the balance pass, against the support polygon eroded by
/// `config.com_margin`.
pub fn project_com_to_support(
    pose: &Pose,
    skeleton: &SkeletonSpec,
    polygon: &SupportPolygon,
    config: &StabilizerConfig,
) -> Result<Pose> {
    pose.validate(skeleton)?;
    let shrunk = polygon.shrink(config.com_margin);
    Ok(project_with_shrunk(skeleton, pose, &shrunk, config.max_root_correction).0)
}

/// Per-frame record of what the reference reconstructor did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    /// Distance of the input CoM projection outside the eroded polygon.
    pub com_violation_distance: f64,
    /// Horizontal root displacement between input and output.
    pub correction_magnitude: f64,
    /// Distance of the output CoM projection outside the eroded polygon.
    pub residual_violation: f64,
}

/// Reference reconstructor: clamp, balance, smooth, balance again.
///
/// The support polygon is the footprint of the skeleton's zero pose at the
/// origin. Root translation moves the whole body, feet included, so a
/// footprint taken from each frame could never be corrected by a root shift.
#[derive(Clone, Debug)]
pub struct BalanceProjector {
    skeleton: Arc<SkeletonSpec>,
    config: StabilizerConfig,
    max_length: usize,
    /// Per rotation slot.
    limits: Vec<Option<[f64; 2]>>,
    support: SupportPolygon,
    shrunk: SupportPolygon,
}

impl BalanceProjector {
    pub fn new(skeleton: Arc<SkeletonSpec>, config: &StabilizerConfig, max_length: usize) -> Result<Self> {
        config.validate()?;
        if max_length < config.min_length {
            return Err(Error::Config(format!(
                "segment length {max_length} is below stabilizer.min_length {}",
                config.min_length
            )));
        }
        for name in config.joint_limits.keys() {
            let i = skeleton
                .joint_index(name)
                .ok_or_else(|| Error::Config(format!("stabilizer.joint_limits names unknown joint '{name}'")))?;
            if skeleton.joint(i).kind.is_fixed() {
                return Err(Error::Config(format!("stabilizer.joint_limits: joint '{name}' is fixed")));
            }
        }
        let mut limits = vec![None; skeleton.rotation_count()];
        for (i, j) in skeleton.joints().iter().enumerate() {
            if let Some(slot) = skeleton.rotation_slot(i) {
                limits[slot] = config.joint_limits.get(&j.name).copied().or(j.limit);
            }
        }
        let fk = forward_kinematics_unchecked(&skeleton, &zero_pose(&skeleton));
        let support = support_polygon(&skeleton, &fk, config.foot_extent)?;
        let shrunk = support.shrink(config.com_margin);
        Ok(Self {
            skeleton,
            config: config.clone(),
            max_length,
            limits,
            support,
            shrunk,
        })
    }

    /// Replaces the zero-pose footprint with `support`.
    pub fn with_support(mut self, support: SupportPolygon) -> Self {
        self.shrunk = support.shrink(self.config.com_margin);
        self.support = support;
        self
    }

    pub fn skeleton(&self) -> &Arc<SkeletonSpec> {
        &self.skeleton
    }

    pub fn config(&self) -> &StabilizerConfig {
        &self.config
    }

    pub fn support(&self) -> &SupportPolygon {
        &self.support
    }

    /// The support polygon eroded by `com_margin`.
    pub fn shrunk_support(&self) -> &SupportPolygon {
        &self.shrunk
    }

    /// Distance of the pose's CoM ground projection outside the eroded polygon.
    pub fn com_violation(&self, pose: &Pose) -> f64 {
        let com = center_of_mass(&self.skeleton, &forward_kinematics_unchecked(&self.skeleton, pose))
            .expect("consistent pose");
        self.shrunk.distance_outside(Point2::new(com.x, com.y))
    }

    pub fn clamp_limits(&self, pose: &Pose) -> Pose {
        let mut out = pose.clone();
        for (rot, limit) in out.joint_rotations.iter_mut().zip(&self.limits) {
            let Some([lo, hi]) = *limit else { continue };
            match rot {
                JointRotation::Angle(a) => *a = a.clamp(lo, hi),
                JointRotation::Quat(q) => {
                    let bound = lo.abs().max(hi.abs());
                    let v = rotation::log_map(q);
                    let angle = v.norm();
                    if angle > bound {
                        *q = rotation::renormalize(rotation::exp_map(&(v * (bound / angle))));
                    }
                }
            }
        }
        out
    }

    /// Replaces every block of `smoothing_window` consecutive frames (the last
    /// block may be shorter) by the block's mean joint rotations. Root
    /// transforms are left alone.
    pub fn smooth(&self, poses: &mut [Pose]) {
        let w = self.config.smoothing_window;
        if w <= 1 {
            return;
        }
        let slots = self.skeleton.rotation_count();
        for block in poses.chunks_mut(w) {
            for s in 0..slots {
                let mean = match block[0].joint_rotations[s] {
                    JointRotation::Angle(_) => {
                        let sum: f64 = block
                            .iter()
                            .map(|p| match p.joint_rotations[s] {
                                JointRotation::Angle(a) => a,
                                JointRotation::Quat(_) => unreachable!("validated pose"),
                            })
                            .sum();
                        JointRotation::Angle(sum / block.len() as f64)
                    }
                    JointRotation::Quat(_) => {
                        let qs: Vec<_> = block
                            .iter()
                            .map(|p| match p.joint_rotations[s] {
                                JointRotation::Quat(q) => q,
                                JointRotation::Angle(_) => unreachable!("validated pose"),
                            })
                            .collect();
                        JointRotation::Quat(rotation::mean(&qs))
                    }
                };
                for p in block.iter_mut() {
                    p.joint_rotations[s] = mean;
                }
            }
        }
    }

    /// Reconstructs and reports per-frame diagnostics.
    pub fn reconstruct_with_diagnostics(
        &self,
        segment: &TrajectorySegment,
    ) -> Result<(TrajectorySegment, Vec<FrameDiagnostics>)> {
        for p in segment.poses() {
            p.validate(&self.skeleton)?;
        }
        let cap = self.config.max_root_correction;
        let mut poses: Vec<Pose> = segment
            .poses()
            .iter()
            .map(|p| project_with_shrunk(&self.skeleton, &self.clamp_limits(p), &self.shrunk, cap).0)
            .collect();
        self.smooth(&mut poses);
        for p in poses.iter_mut() {
            *p = project_with_shrunk(&self.skeleton, p, &self.shrunk, cap).0;
        }
        let diagnostics = segment
            .poses()
            .iter()
            .zip(&poses)
            .enumerate()
            .map(|(frame, (a, b))| FrameDiagnostics {
                frame,
                com_violation_distance: self.com_violation(a),
                correction_magnitude: (b.root_translation - a.root_translation).xy().norm(),
                residual_violation: self.com_violation(b),
            })
            .collect();
        Ok((TrajectorySegment::new(poses)?, diagnostics))
    }
}

impl MotionReconstructor for BalanceProjector {
    fn name(&self) -> &str {
        "reference"
    }

    fn capability(&self) -> Capability {
        Capability {
            min_length: self.config.min_length,
            max_length: self.max_length,
        }
    }

    fn reconstruct_checked(&self, segment: &TrajectorySegment) -> Result<TrajectorySegment> {
        Ok(self.reconstruct_with_diagnostics(segment)?.0)
    }
}

/// Mean squared frame-to-frame geodesic change of the joint rotations.
pub fn temporal_roughness(skeleton: &SkeletonSpec, segment: &TrajectorySegment) -> f64 {
    let poses = segment.poses();
    if poses.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in poses.windows(2) {
        for (i, joint) in skeleton.joints().iter().enumerate() {
            let Some(slot) = skeleton.rotation_slot(i) else { continue };
            let a = pair[0].joint_rotations[slot].to_quat(&joint.kind);
            let b = pair[1].joint_rotations[slot].to_quat(&joint.kind);
            let d = match (&joint.kind, pair[0].joint_rotations[slot], pair[1].joint_rotations[slot]) {
                (JointKind::Revolute { .. }, JointRotation::Angle(x), JointRotation::Angle(y)) => (y - x).abs(),
                _ => rotation::geodesic(&a, &b),
            };
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{Quat, Vec3};

    fn pt(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn human_projector() -> BalanceProjector {
        let human = Arc::new(SkeletonSpec::resolve("human").unwrap());
        BalanceProjector::new(human, &StabilizerConfig::default(), 145).unwrap()
    }

    fn still_segment(pose: &Pose, n: usize) -> TrajectorySegment {
        TrajectorySegment::new(vec![pose.clone(); n]).unwrap()
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = SupportPolygon::hull(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0), pt(0.5, 0.5)]).unwrap();
        assert_eq!(h.vertices().len(), 4);
        assert!((h.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_foot_gives_disc_polygon() {
        let skel = SkeletonSpec::resolve("pendulum3").unwrap();
        let fk = forward_kinematics_unchecked(&skel, &zero_pose(&skel));
        let poly = support_polygon(&skel, &fk, 0.1).unwrap();
        assert_eq!(poly.vertices().len(), FOOT_DISC_VERTICES);
        for v in poly.vertices() {
            assert!((v.norm() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn two_feet_hull_extent() {
        // feet at x = +-0.2 inflated by 0.05 span x in [-0.25, 0.25]
        let disc = |c: Point2| {
            (0..FOOT_DISC_VERTICES)
                .map(move |k| {
                    let a = std::f64::consts::TAU * k as f64 / FOOT_DISC_VERTICES as f64;
                    c + pt(a.cos(), a.sin()) * 0.05
                })
                .collect::<Vec<_>>()
        };
        let mut pts = disc(pt(-0.2, 0.0));
        pts.extend(disc(pt(0.2, 0.0)));
        let h = SupportPolygon::hull(&pts).unwrap();
        let xs: Vec<f64> = h.vertices().iter().map(|v| v.x).collect();
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((min + 0.25).abs() < 1e-12 && (max - 0.25).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_give_segment() {
        let h = SupportPolygon::hull(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, 0.0)]).unwrap();
        assert_eq!(h.vertices().len(), 2);
        assert!(h.contains(pt(0.3, 0.0), 1e-12));
        assert!(!h.contains(pt(0.3, 0.1), 1e-3));
        assert!((h.distance_outside(pt(0.5, 0.2)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn shrink_square() {
        let h = SupportPolygon::hull(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)]).unwrap();
        let s = h.shrink(0.1);
        assert!((s.area() - 0.64).abs() < 1e-12);
        assert!(s.contains(pt(0.1, 0.1), 1e-12));
        assert!(!s.contains(pt(0.05, 0.5), 1e-6));
        let gone = h.shrink(0.6);
        assert_eq!(gone.vertices().len(), 1);
        assert!((gone.vertices()[0] - pt(0.5, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn closest_point_outside_corner_and_edge() {
        let h = SupportPolygon::hull(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)]).unwrap();
        assert_eq!(h.closest_point(pt(2.0, 2.0)), pt(1.0, 1.0));
        assert_eq!(h.closest_point(pt(0.5, -3.0)), pt(0.5, 0.0));
        assert_eq!(h.closest_point(pt(0.25, 0.75)), pt(0.25, 0.75));
    }

    #[test]
    fn identity_is_bit_identical() {
        let human = SkeletonSpec::resolve("human").unwrap();
        let mut pose = zero_pose(&human);
        pose.root_translation = Vec3::new(0.123456789, -1.0, 0.3);
        let seg = still_segment(&pose, 9);
        let out = reconstruct(&IdentityReconstructor::new(145), &seg).unwrap();
        assert_eq!(out, seg);
    }

    #[test]
    fn still_stable_segment_is_a_fixed_point() {
        let proj = human_projector();
        let seg = still_segment(&zero_pose(proj.skeleton()), 20);
        let out = reconstruct(&proj, &seg).unwrap();
        for (a, b) in seg.poses().iter().zip(out.poses()) {
            assert!((a.root_translation - b.root_translation).norm() < 1e-12);
        }
    }

    #[test]
    fn length_contract() {
        let proj = human_projector();
        let short = still_segment(&zero_pose(proj.skeleton()), 3);
        assert!(matches!(reconstruct(&proj, &short), Err(Error::Contract(_))));
        let long = still_segment(&zero_pose(proj.skeleton()), 146);
        assert!(matches!(reconstruct(&proj, &long), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_is_input_error() {
        let proj = human_projector();
        let mut pose = zero_pose(proj.skeleton());
        pose.root_translation.x = f64::NAN;
        let seg = still_segment(&pose, 10);
        assert!(matches!(reconstruct(&proj, &seg), Err(Error::Input(_))));
    }

    #[test]
    fn projection_cap_binds_far_outside() {
        let proj = human_projector();
        let mut pose = zero_pose(proj.skeleton());
        pose.root_translation.x = 3.0;
        let cfg = proj.config().clone();
        let out = project_com_to_support(&pose, proj.skeleton(), proj.support(), &cfg).unwrap();
        let shift = (out.root_translation - pose.root_translation).norm();
        assert!((shift - cfg.max_root_correction).abs() < 1e-12);
    }

    #[test]
    fn clamp_limits_cone_and_interval() {
        let proj = human_projector();
        let skel = proj.skeleton().clone();
        let mut pose = zero_pose(&skel);
        let knee = skel.rotation_slot(skel.joint_index("l_knee").unwrap()).unwrap();
        let hip = skel.rotation_slot(skel.joint_index("l_hip").unwrap()).unwrap();
        pose.joint_rotations[knee] = JointRotation::Angle(5.0);
        pose.joint_rotations[hip] = JointRotation::Quat(rotation::from_axis_angle(&Vec3::x(), 2.5));
        let out = proj.clamp_limits(&pose);
        assert_eq!(out.joint_rotations[knee], JointRotation::Angle(2.6));
        let JointRotation::Quat(q) = out.joint_rotations[hip] else { panic!() };
        assert!((rotation::geodesic(&q, &Quat::identity()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = StabilizerConfig::default();
        c.smoothing_window = 4;
        assert!(c.validate().is_err());
        let mut c = StabilizerConfig::default();
        c.max_root_correction = 0.0;
        assert!(c.validate().is_err());
        let mut c = StabilizerConfig::default();
        c.joint_limits.insert("nope".into(), [0.0, 1.0]);
        let human = Arc::new(SkeletonSpec::resolve("human").unwrap());
        assert!(BalanceProjector::new(human, &c, 145).is_err());
    }
}
