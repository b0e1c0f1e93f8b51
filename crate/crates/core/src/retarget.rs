//! Robot-to-human pose mapping.
//!
//! Both skeletons share an aligned zero pose. A human joint either copies the
//! rotation of one robot joint, receives the composition of three robot
//! revolute joints (a spherical joint emulated by a revolute triple), or stays
//! at the zero pose. The root transform passes through unchanged.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rotation::{self, Quat, Vec3};
use crate::skeleton::{zero_pose, JointKind, JointRotation, Pose, SkeletonSpec, TrajectorySegment};

/// Minimum `|det[a1 a2 a3]|` for a revolute triple to count as non-degenerate.
pub const DEGENERATE_DET: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum MappingEntry {
    OneToOne {
        robot: usize,
        human: usize,
    },
    /// `order[k]` is the index into `robot` of the k-th rotation applied
    /// (innermost first); the composed rotation is `R3 * R2 * R1`.
    TripleToSpherical {
        robot: [usize; 3],
        order: [usize; 3],
        human: usize,
    },
    HumanRedundant {
        human: usize,
    },
    /// Robot joint with no human counterpart; excluded from the human pose.
    RobotIgnored {
        robot: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    HumanUncovered(String),
    HumanCoveredTwice(String),
    RobotUncovered(String),
    RobotCoveredTwice(String),
    DegenerateAxes { human: String },
    BadOrder { human: String },
    KindMismatch { robot: String, human: String, reason: &'static str },
    AxisMismatch { robot: String, human: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::HumanUncovered(j) => write!(f, "human joint '{j}' is not covered by any entry"),
            Violation::HumanCoveredTwice(j) => write!(f, "human joint '{j}' is covered by more than one entry"),
            Violation::RobotUncovered(j) => write!(f, "robot joint '{j}' is not covered by any entry"),
            Violation::RobotCoveredTwice(j) => write!(f, "robot joint '{j}' is covered by more than one entry"),
            Violation::DegenerateAxes { human } => {
                write!(f, "degenerate axes: revolute triple for '{human}' has linearly dependent axes")
            }
            Violation::BadOrder { human } => write!(f, "triple for '{human}' has an order that is not a permutation of 0..3"),
            Violation::KindMismatch { robot, human, reason } => {
                write!(f, "robot joint '{robot}' cannot drive human joint '{human}': {reason}")
            }
            Violation::AxisMismatch { robot, human } => {
                write!(f, "revolute joints '{robot}' and '{human}' do not share an axis")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MappingTable {
    robot: Arc<SkeletonSpec>,
    human: Arc<SkeletonSpec>,
    entries: Vec<MappingEntry>,
    violations: Vec<Violation>,
}

impl MappingTable {
    /// Builds a table; problems are collected, not raised (see [`validate_mapping`]).
    pub fn new(robot: Arc<SkeletonSpec>, human: Arc<SkeletonSpec>, entries: Vec<MappingEntry>) -> Self {
        let mut table = Self {
            robot,
            human,
            entries,
            violations: Vec::new(),
        };
        table.violations = table.check();
        table
    }

    pub fn robot(&self) -> &Arc<SkeletonSpec> {
        &self.robot
    }

    pub fn human(&self) -> &Arc<SkeletonSpec> {
        &self.human
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Human joints that receive a robot rotation.
    pub fn mapped_human_joints(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .entries
            .iter()
            .filter_map(|e| match e {
                MappingEntry::OneToOne { human, .. } | MappingEntry::TripleToSpherical { human, .. } => Some(*human),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    fn check(&self) -> Vec<Violation> {
        let (robot, human) = (&*self.robot, &*self.human);
        let mut out = Vec::new();
        let mut human_count = vec![0usize; human.len()];
        let mut robot_count = vec![0usize; robot.len()];
        for e in &self.entries {
            match e {
                MappingEntry::OneToOne { robot: r, human: h } => {
                    robot_count[*r] += 1;
                    human_count[*h] += 1;
                    let (rj, hj) = (robot.joint(*r), human.joint(*h));
                    let mismatch = |reason| Violation::KindMismatch {
                        robot: rj.name.clone(),
                        human: hj.name.clone(),
                        reason,
                    };
                    match (&rj.kind, &hj.kind) {
                        (JointKind::Fixed, _) => out.push(mismatch("robot joint is fixed")),
                        (_, JointKind::Fixed) => out.push(mismatch("human joint is fixed")),
                        (JointKind::Spherical, JointKind::Revolute { .. }) => {
                            out.push(mismatch("a spherical rotation does not fit a revolute joint"))
                        }
                        (JointKind::Revolute { axis: a }, JointKind::Revolute { axis: b }) => {
                            if (a.dot(b).abs() - 1.0).abs() > 1e-9 {
                                out.push(Violation::AxisMismatch {
                                    robot: rj.name.clone(),
                                    human: hj.name.clone(),
                                });
                            }
                        }
                        _ => {}
                    }
                }
                MappingEntry::TripleToSpherical { robot: rs, order, human: h } => {
                    human_count[*h] += 1;
                    for r in rs {
                        robot_count[*r] += 1;
                    }
                    let hj = human.joint(*h);
                    if !matches!(hj.kind, JointKind::Spherical) {
                        out.push(Violation::KindMismatch {
                            robot: robot.joint(rs[0]).name.clone(),
                            human: hj.name.clone(),
                            reason: "revolute triples drive spherical human joints only",
                        });
                    }
                    let mut sorted = *order;
                    sorted.sort_unstable();
                    if sorted != [0, 1, 2] {
                        out.push(Violation::BadOrder { human: hj.name.clone() });
                    }
                    let mut axes = Vec::with_capacity(3);
                    for r in rs {
                        match &robot.joint(*r).kind {
                            JointKind::Revolute { axis } => axes.push(*axis),
                            _ => out.push(Violation::KindMismatch {
                                robot: robot.joint(*r).name.clone(),
                                human: hj.name.clone(),
                                reason: "triple members must be revolute",
                            }),
                        }
                    }
                    if axes.len() == 3 && axes_degenerate(&[axes[0], axes[1], axes[2]]) {
                        out.push(Violation::DegenerateAxes { human: hj.name.clone() });
                    }
                }
                MappingEntry::HumanRedundant { human: h } => human_count[*h] += 1,
                MappingEntry::RobotIgnored { robot: r } => robot_count[*r] += 1,
            }
        }
        for (i, j) in human.joints().iter().enumerate() {
            match human_count[i] {
                0 if !j.kind.is_fixed() => out.push(Violation::HumanUncovered(j.name.clone())),
                0 | 1 => {}
                _ => out.push(Violation::HumanCoveredTwice(j.name.clone())),
            }
        }
        for (i, j) in robot.joints().iter().enumerate() {
            match robot_count[i] {
                0 if !j.kind.is_fixed() => out.push(Violation::RobotUncovered(j.name.clone())),
                0 | 1 => {}
                _ => out.push(Violation::RobotCoveredTwice(j.name.clone())),
            }
        }
        out
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: MappingFile = toml::from_str(text).map_err(|e| Error::Config(format!("mapping file: {e}")))?;
        let load = |name: &str| -> Result<Arc<SkeletonSpec>> {
            if crate::assets::skeleton_text(name).is_some() {
                return SkeletonSpec::resolve(name).map(Arc::new);
            }
            let path = match base_dir {
                Some(dir) if Path::new(name).is_relative() => dir.join(name),
                _ => Path::new(name).to_path_buf(),
            };
            SkeletonSpec::load(path).map(Arc::new)
        };
        let robot = load(&file.robot)?;
        let human = load(&file.human)?;
        file.build(robot, human)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    /// Loads a bundled mapping by name, or a mapping file by path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match crate::assets::mapping_text(name_or_path) {
            Some(text) => Self::from_toml_str(text, None),
            None => Self::load(name_or_path),
        }
    }
}

fn axes_degenerate(axes: &[Vec3; 3]) -> bool {
    axes[0].dot(&axes[1].cross(&axes[2])).abs() < DEGENERATE_DET
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingFile {
    robot: String,
    human: String,
    #[serde(default)]
    redundant: Vec<String>,
    #[serde(default)]
    ignored: Vec<String>,
    #[serde(default)]
    entries: Vec<EntryRecord>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EntryRecord {
    OneToOne { robot: String, human: String },
    TripleToSpherical { robot: [String; 3], order: [usize; 3], human: String },
    HumanRedundant { human: String },
    RobotIgnored { robot: String },
}

impl MappingFile {
    fn build(self, robot: Arc<SkeletonSpec>, human: Arc<SkeletonSpec>) -> Result<MappingTable> {
        let r = |name: &str| {
            robot
                .joint_index(name)
                .ok_or_else(|| Error::Structural(format!("mapping names unknown robot joint '{name}'")))
        };
        let h = |name: &str| {
            human
                .joint_index(name)
                .ok_or_else(|| Error::Structural(format!("mapping names unknown human joint '{name}'")))
        };
        let mut entries = Vec::new();
        for e in &self.entries {
            entries.push(match e {
                EntryRecord::OneToOne { robot, human } => MappingEntry::OneToOne {
                    robot: r(robot)?,
                    human: h(human)?,
                },
                EntryRecord::TripleToSpherical { robot, order, human } => MappingEntry::TripleToSpherical {
                    robot: [r(&robot[0])?, r(&robot[1])?, r(&robot[2])?],
                    order: *order,
                    human: h(human)?,
                },
                EntryRecord::HumanRedundant { human } => MappingEntry::HumanRedundant { human: h(human)? },
                EntryRecord::RobotIgnored { robot } => MappingEntry::RobotIgnored { robot: r(robot)? },
            });
        }
        for name in &self.redundant {
            entries.push(MappingEntry::HumanRedundant { human: h(name)? });
        }
        for name in &self.ignored {
            entries.push(MappingEntry::RobotIgnored { robot: r(name)? });
        }
        Ok(MappingTable::new(robot, human, entries))
    }
}

/// Lists every problem with `table`; an empty list means it is usable.
pub fn validate_mapping(table: &MappingTable) -> Vec<Violation> {
    table.violations.clone()
}

/// Composes three revolute rotations: `R(a3, t3) * R(a2, t2) * R(a1, t1)`,
/// where `k`-th applied rotation is `(axes[order[k]], angles[order[k]])`.
pub fn compose_revolute_triple(angles: [f64; 3], axes: [Vec3; 3], order: [usize; 3]) -> Result<Quat> {
    if axes_degenerate(&axes) {
        return Err(Error::Structural("revolute triple axes are linearly dependent".into()));
    }
    let mut sorted = order;
    sorted.sort_unstable();
    if sorted != [0, 1, 2] {
        return Err(Error::Structural(format!("triple order {order:?} is not a permutation")));
    }
    let mut q = Quat::identity();
    for &k in &order {
        q = rotation::from_axis_angle(&axes[k], angles[k]) * q;
    }
    Ok(rotation::renormalize(q))
}

/// Maps a robot pose onto the human skeleton (`s_h = F_M(s_r)`).
pub fn map_robot_to_human(table: &MappingTable, robot_pose: &Pose) -> Result<Pose> {
    if let Some(v) = table.violations.first() {
        return Err(Error::Structural(format!(
            "invalid mapping table ({} violations, first: {v})",
            table.violations.len()
        )));
    }
    robot_pose.validate(&table.robot)?;
    Ok(map_unchecked(table, robot_pose))
}

fn map_unchecked(table: &MappingTable, robot_pose: &Pose) -> Pose {
    let (robot, human) = (&*table.robot, &*table.human);
    let mut out = zero_pose(human);
    out.root_translation = robot_pose.root_translation;
    out.root_orientation = robot_pose.root_orientation;
    for e in &table.entries {
        match *e {
            MappingEntry::OneToOne { robot: r, human: h } => {
                let source = robot_pose.joint_rotations[robot.rotation_slot(r).expect("validated")];
                let slot = human.rotation_slot(h).expect("validated");
                out.joint_rotations[slot] = match (&robot.joint(r).kind, &human.joint(h).kind, source) {
                    (JointKind::Revolute { axis: a }, JointKind::Revolute { axis: b }, JointRotation::Angle(t)) => {
                        JointRotation::Angle(if a.dot(b) < 0.0 { -t } else { t })
                    }
                    (JointKind::Revolute { axis }, JointKind::Spherical, JointRotation::Angle(t)) => {
                        JointRotation::Quat(rotation::from_axis_angle(axis, t))
                    }
                    (_, _, JointRotation::Quat(q)) => JointRotation::Quat(q),
                    _ => unreachable!("kind combinations are validated"),
                };
            }
            MappingEntry::TripleToSpherical { robot: rs, order, human: h } => {
                let mut angles = [0.0; 3];
                let mut axes = [Vec3::zeros(); 3];
                for k in 0..3 {
                    let joint = robot.joint(rs[k]);
                    let JointKind::Revolute { axis } = joint.kind else { unreachable!("validated") };
                    axes[k] = axis;
                    angles[k] = match robot_pose.joint_rotations[robot.rotation_slot(rs[k]).expect("validated")] {
                        JointRotation::Angle(t) => t,
                        JointRotation::Quat(_) => unreachable!("validated pose"),
                    };
                }
                let q = compose_revolute_triple(angles, axes, order).expect("validated axes");
                out.joint_rotations[human.rotation_slot(h).expect("validated")] = JointRotation::Quat(q);
            }
            MappingEntry::HumanRedundant { .. } | MappingEntry::RobotIgnored { .. } => {}
        }
    }
    out
}

/// Element-wise [`map_robot_to_human`]; length is preserved.
pub fn map_segment(table: &MappingTable, robot_segment: &TrajectorySegment) -> Result<TrajectorySegment> {
    let poses = robot_segment
        .poses()
        .iter()
        .map(|p| map_robot_to_human(table, p))
        .collect::<Result<Vec<_>>>()?;
    TrajectorySegment::new(poses)
}

/// Name-keyed lookup of entries, handy for diagnostics.
pub fn entry_for_human<'a>(table: &'a MappingTable, human_joint: &str) -> Option<&'a MappingEntry> {
    let idx = table.human.joint_index(human_joint)?;
    let by_human: HashMap<usize, &MappingEntry> = table
        .entries
        .iter()
        .filter_map(|e| match e {
            MappingEntry::OneToOne { human, .. }
            | MappingEntry::TripleToSpherical { human, .. }
            | MappingEntry::HumanRedundant { human } => Some((*human, e)),
            MappingEntry::RobotIgnored { .. } => None,
        })
        .collect();
    by_human.get(&idx).copied()
}
