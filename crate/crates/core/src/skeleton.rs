//! Kinematic trees, poses and forward kinematics.
//!
//! A [`SkeletonSpec`] stores joints in topological order (every parent index is
//! smaller than its child's), so forward kinematics is one pass over the joint
//! list. Joint `i`'s world transform is
//! `parent_world * translation(offset_i) * rotation(q_i)`; the root's parent
//! transform is the pose's root translation/orientation.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{self, Quat, Vec3};

/// Tolerance for unit-norm checks on axes and quaternions.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum JointKind {
    Revolute { axis: Vec3 },
    Spherical,
    Fixed,
}

impl JointKind {
    pub fn is_fixed(&self) -> bool {
        matches!(self, JointKind::Fixed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            JointKind::Revolute { .. } => "revolute",
            JointKind::Spherical => "spherical",
            JointKind::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// `None` marks the root.
    pub parent: Option<usize>,
    pub kind: JointKind,
    /// Translation from the parent joint in the zero pose, meters.
    pub offset: Vec3,
    /// Point mass carried at the joint, kilograms.
    pub mass: f64,
    /// Optional rotation limit `[min, max]` in radians. For spherical joints
    /// the larger magnitude bounds the rotation angle.
    pub limit: Option<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct SkeletonSpec {
    name: String,
    joints: Vec<JointSpec>,
    foot_joints: Vec<usize>,
    slots: Vec<Option<usize>>,
    rotation_count: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for SkeletonSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.joints == other.joints && self.foot_joints == other.foot_joints
    }
}

impl SkeletonSpec {
    pub fn new(name: impl Into<String>, joints: Vec<JointSpec>, foot_joints: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if joints.is_empty() {
            return Err(Error::Structural(format!("skeleton '{name}' has no joints")));
        }
        let mut index = HashMap::new();
        let mut roots = 0;
        for (i, j) in joints.iter().enumerate() {
            if index.insert(j.name.clone(), i).is_some() {
                return Err(Error::Structural(format!("duplicate joint name '{}'", j.name)));
            }
            match j.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(Error::Structural(format!(
                        "joint '{}' (index {i}) has parent index {p}; joints must be topologically ordered",
                        j.name
                    )))
                }
                Some(_) => {}
            }
            if let JointKind::Revolute { axis } = &j.kind {
                if (axis.norm() - 1.0).abs() >= UNIT_TOL {
                    return Err(Error::Structural(format!(
                        "revolute joint '{}' axis is not unit norm (|axis| = {})",
                        j.name,
                        axis.norm()
                    )));
                }
            }
            if !(j.mass > 0.0) || !j.mass.is_finite() {
                return Err(Error::Structural(format!("joint '{}' mass must be positive", j.name)));
            }
            if !j.offset.iter().all(|x| x.is_finite()) {
                return Err(Error::Structural(format!("joint '{}' offset is not finite", j.name)));
            }
        }
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::Structural(format!(
                "skeleton '{name}' must have exactly one root at index 0 (found {roots})"
            )));
        }
        if foot_joints.is_empty() {
            return Err(Error::Structural(format!("skeleton '{name}' declares no foot joints")));
        }
        if let Some(&bad) = foot_joints.iter().find(|&&f| f >= joints.len()) {
            return Err(Error::Structural(format!("foot joint index {bad} out of range")));
        }
        let mut slots = Vec::with_capacity(joints.len());
        let mut rotation_count = 0;
        for j in &joints {
            if j.kind.is_fixed() {
                slots.push(None);
            } else {
                slots.push(Some(rotation_count));
                rotation_count += 1;
            }
        }
        Ok(Self {
            name,
            joints,
            foot_joints,
            slots,
            rotation_count,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &JointSpec {
        &self.joints[i]
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Position of joint `i` inside `Pose::joint_rotations`, `None` for fixed joints.
    pub fn rotation_slot(&self, i: usize) -> Option<usize> {
        self.slots[i]
    }

    /// Number of non-fixed joints.
    pub fn rotation_count(&self) -> usize {
        self.rotation_count
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.joints.iter().map(|j| j.mass)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().sum()
    }

    /// Parses the skeleton definition text format (TOML).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("skeleton definition: {e}")))?;
        file.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Loads a bundled definition by name, or a file if `name_or_path` is a path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match crate::assets::skeleton_text(name_or_path) {
            Some(text) => Self::from_toml_str(text),
            None => Self::load(name_or_path),
        }
    }

    pub fn to_toml_string(&self) -> String {
        let file = SkeletonFile {
            name: self.name.clone(),
            foot_joints: self.foot_joints.iter().map(|&i| self.joints[i].name.clone()).collect(),
            joints: self
                .joints
                .iter()
                .map(|j| JointEntry {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| self.joints[p].name.clone()),
                    kind: j.kind.label().to_string(),
                    axis: match &j.kind {
                        JointKind::Revolute { axis } => Some([axis.x, axis.y, axis.z]),
                        _ => None,
                    },
                    offset: [j.offset.x, j.offset.y, j.offset.z],
                    mass: j.mass,
                    limit: j.limit,
                })
                .collect(),
        };
        toml::to_string(&file).expect("skeleton serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    name: String,
    foot_joints: Vec<String>,
    joints: Vec<JointEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    offset: [f64; 3],
    mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit: Option<[f64; 2]>,
}

impl SkeletonFile {
    fn build(self) -> Result<SkeletonSpec> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut joints = Vec::with_capacity(self.joints.len());
        for (i, e) in self.joints.iter().enumerate() {
            let parent = match &e.parent {
                None => None,
                Some(p) => Some(*seen.get(p.as_str()).ok_or_else(|| {
                    Error::Structural(format!(
                        "joint '{}' names parent '{p}' which is not defined earlier in the file",
                        e.name
                    ))
                })?),
            };
            let kind = match (e.kind.as_str(), e.axis) {
                ("revolute", Some(a)) => JointKind::Revolute {
                    axis: Vec3::new(a[0], a[1], a[2]),
                },
                ("revolute", None) => {
                    return Err(Error::Structural(format!("revolute joint '{}' needs an axis", e.name)))
                }
                ("spherical", _) => JointKind::Spherical,
                ("fixed", _) => JointKind::Fixed,
                (other, _) => {
                    return Err(Error::Structural(format!("joint '{}' has unknown kind '{other}'", e.name)))
                }
            };
            joints.push(JointSpec {
                name: e.name.clone(),
                parent,
                kind,
                offset: Vec3::new(e.offset[0], e.offset[1], e.offset[2]),
                mass: e.mass,
                limit: e.limit,
            });
            seen.insert(e.name.as_str(), i);
        }
        let mut feet = Vec::new();
        let mut dedup = BTreeSet::new();
        for f in &self.foot_joints {
            let i = *seen
                .get(f.as_str())
                .ok_or_else(|| Error::Structural(format!("unknown foot joint '{f}'")))?;
            if dedup.insert(i) {
                feet.push(i);
            }
        }
        SkeletonSpec::new(self.name, joints, feet)
    }
}

/// Rotation state of one non-fixed joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JointRotation {
    /// Revolute joint angle, radians.
    Angle(f64),
    /// Spherical joint rotation.
    Quat(Quat),
}

impl JointRotation {
    /// The rotation as a quaternion, given the joint's kind.
    pub fn to_quat(&self, kind: &JointKind) -> Quat {
        match (self, kind) {
            (JointRotation::Angle(a), JointKind::Revolute { axis }) => rotation::from_axis_angle(axis, *a),
            (JointRotation::Quat(q), _) => *q,
            (JointRotation::Angle(_), _) => unreachable!("angle on a non-revolute joint; pose not validated"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root_translation: Vec3,
    pub root_orientation: Quat,
    /// One entry per non-fixed joint, in joint order.
    pub joint_rotations: Vec<JointRotation>,
}

impl Pose {
    /// Checks the pose against `skeleton`: slot count, per-slot kind, finite
    /// values and unit quaternions.
    pub fn validate(&self, skeleton: &SkeletonSpec) -> Result<()> {
        if self.joint_rotations.len() != skeleton.rotation_count() {
            return Err(Error::Structural(format!(
                "pose has {} joint rotations, skeleton '{}' has {} non-fixed joints",
                self.joint_rotations.len(),
                skeleton.name(),
                skeleton.rotation_count()
            )));
        }
        if !self.root_translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("root translation is not finite".into()));
        }
        check_quat(&self.root_orientation, "root orientation")?;
        for (i, joint) in skeleton.joints().iter().enumerate() {
            let Some(slot) = skeleton.rotation_slot(i) else { continue };
            match (&joint.kind, &self.joint_rotations[slot]) {
                (JointKind::Revolute { .. }, JointRotation::Angle(a)) => {
                    if !a.is_finite() {
                        return Err(Error::Input(format!("joint '{}' angle is not finite", joint.name)));
                    }
                }
                (JointKind::Spherical, JointRotation::Quat(q)) => check_quat(q, &joint.name)?,
                (kind, _) => {
                    return Err(Error::Structural(format!(
                        "joint '{}' is {} but the pose carries the wrong rotation type",
                        joint.name,
                        kind.label()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Rotation of joint `i` as a quaternion (identity for fixed joints).
    pub fn joint_quat(&self, skeleton: &SkeletonSpec, i: usize) -> Quat {
        match skeleton.rotation_slot(i) {
            Some(s) => self.joint_rotations[s].to_quat(&skeleton.joint(i).kind),
            None => Quat::identity(),
        }
    }

    /// Looks up the rotation of a named joint.
    pub fn rotation_of(&self, skeleton: &SkeletonSpec, name: &str) -> Option<JointRotation> {
        let i = skeleton.joint_index(name)?;
        skeleton.rotation_slot(i).map(|s| self.joint_rotations[s])
    }

    pub fn is_finite(&self) -> bool {
        self.root_translation.iter().all(|x| x.is_finite())
            && self.root_orientation.coords.iter().all(|x| x.is_finite())
            && self.joint_rotations.iter().all(|r| match r {
                JointRotation::Angle(a) => a.is_finite(),
                JointRotation::Quat(q) => q.coords.iter().all(|x| x.is_finite()),
            })
    }
}

fn check_quat(q: &Quat, what: &str) -> Result<()> {
    if !q.coords.iter().all(|x| x.is_finite()) {
        return Err(Error::Input(format!("{what}: quaternion is not finite")));
    }
    if (q.coords.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::Input(format!("{what}: quaternion is not unit norm")));
    }
    Ok(())
}

/// World-frame pose of a single joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointPose {
    pub position: Vec3,
    /// Unit quaternion with non-negative scalar part.
    pub orientation: Quat,
}

/// A window of consecutive poses on one skeleton; never empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    poses: Vec<Pose>,
}

impl TrajectorySegment {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Contract("trajectory segment must hold at least one pose".into()));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Validates every pose against `skeleton` and the length bound `max_len`.
    pub fn validate(&self, skeleton: &SkeletonSpec, max_len: usize) -> Result<()> {
        if self.len() > max_len {
            return Err(Error::Contract(format!(
                "segment length {} exceeds the maximum {max_len}",
                self.len()
            )));
        }
        self.poses.iter().try_for_each(|p| p.validate(skeleton))
    }
}

/// World-frame pose of every joint.
pub fn forward_kinematics(skeleton: &SkeletonSpec, pose: &Pose) -> Result<Vec<JointPose>> {
    pose.validate(skeleton)?;
    Ok(forward_kinematics_unchecked(skeleton, pose))
}

/// Forward kinematics without validation; the caller guarantees consistency.
pub(crate) fn forward_kinematics_unchecked(skeleton: &SkeletonSpec, pose: &Pose) -> Vec<JointPose> {
    let mut out: Vec<JointPose> = Vec::with_capacity(skeleton.len());
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let (parent_pos, parent_rot) = match joint.parent {
            None => (pose.root_translation, pose.root_orientation),
            Some(p) => (out[p].position, out[p].orientation),
        };
        let position = parent_pos + parent_rot * joint.offset;
        let local = pose.joint_quat(skeleton, i);
        let orientation = rotation::renormalize(parent_rot * local);
        out.push(JointPose { position, orientation });
    }
    out
}

/// Mass-weighted mean of joint positions.
pub fn center_of_mass(skeleton: &SkeletonSpec, joint_poses: &[JointPose]) -> Result<Vec3> {
    if skeleton.is_empty() || joint_poses.is_empty() {
        return Err(Error::Structural("center of mass of an empty skeleton".into()));
    }
    if joint_poses.len() != skeleton.len() {
        return Err(Error::Structural(format!(
            "{} joint poses for a skeleton of {} joints",
            joint_poses.len(),
            skeleton.len()
        )));
    }
    let total = skeleton.total_mass();
    let mut com = Vec3::zeros();
    for (jp, m) in joint_poses.iter().zip(skeleton.masses()) {
        com += jp.position * (m / total);
    }
    Ok(com)
}

/// The aligned initial configuration: identity rotations, root at the origin.
pub fn zero_pose(skeleton: &SkeletonSpec) -> Pose {
    let joint_rotations = skeleton
        .joints()
        .iter()
        .filter_map(|j| match j.kind {
            JointKind::Revolute { .. } => Some(JointRotation::Angle(0.0)),
            JointKind::Spherical => Some(JointRotation::Quat(Quat::identity())),
            JointKind::Fixed => None,
        })
        .collect();
    Pose {
        root_translation: Vec3::zeros(),
        root_orientation: Quat::identity(),
        joint_rotations,
    }
}
