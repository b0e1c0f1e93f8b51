//! Line-delimited trajectory files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"time_step":3,"observation":[...],"pose":{"root_translation":[x,y,z],
//!  "root_orientation":[w,x,y,z],"joints":[{"name":"l_knee","angle":0.1},
//!  {"name":"l_hip","quat":[w,x,y,z]}]},"action":[...],"task_reward":0.9}
//! ```
//!
//! `observation`, `action` and `task_reward` may be omitted (human-pose files
//! carry only poses).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{self, Vec3};
use crate::skeleton::{JointKind, JointRotation, Pose, SkeletonSpec, TrajectorySegment};

/// Accepted deviation from unit norm for quaternions read from files.
pub const FILE_QUAT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quat: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub root_translation: [f64; 3],
    pub root_orientation: [f64; 4],
    pub joints: Vec<JointRecord>,
}

impl PoseRecord {
    pub fn from_pose(skeleton: &SkeletonSpec, pose: &Pose) -> Self {
        let t = pose.root_translation;
        let joints = skeleton
            .joints()
            .iter()
            .enumerate()
            .filter_map(|(i, j)| {
                let slot = skeleton.rotation_slot(i)?;
                Some(match pose.joint_rotations[slot] {
                    JointRotation::Angle(a) => JointRecord {
                        name: j.name.clone(),
                        angle: Some(a),
                        quat: None,
                    },
                    JointRotation::Quat(q) => JointRecord {
                        name: j.name.clone(),
                        angle: None,
                        quat: Some(rotation::to_wxyz(&q)),
                    },
                })
            })
            .collect();
        Self {
            root_translation: [t.x, t.y, t.z],
            root_orientation: rotation::to_wxyz(&pose.root_orientation),
            joints,
        }
    }

    /// Rebuilds the pose; every non-fixed joint must appear exactly once.
    pub fn to_pose(&self, skeleton: &SkeletonSpec) -> Result<Pose> {
        let quat = |v: [f64; 4], what: &str| {
            rotation::from_wxyz(v, FILE_QUAT_TOL)
                .ok_or_else(|| Error::Input(format!("{what}: not a finite unit quaternion")))
        };
        let mut slots: Vec<Option<JointRotation>> = vec![None; skeleton.rotation_count()];
        for rec in &self.joints {
            let i = skeleton.joint_index(&rec.name).ok_or_else(|| {
                Error::Structural(format!("joint '{}' is not part of skeleton '{}'", rec.name, skeleton.name()))
            })?;
            let joint = skeleton.joint(i);
            let slot = skeleton
                .rotation_slot(i)
                .ok_or_else(|| Error::Structural(format!("joint '{}' is fixed and carries no rotation", rec.name)))?;
            let value = match (&joint.kind, rec.angle, rec.quat) {
                (JointKind::Revolute { .. }, Some(a), None) => JointRotation::Angle(a),
                (JointKind::Spherical, None, Some(q)) => JointRotation::Quat(quat(q, &rec.name)?),
                (kind, _, _) => {
                    return Err(Error::Structural(format!(
                        "joint '{}' is {} and needs exactly one {}",
                        rec.name,
                        kind.label(),
                        if matches!(kind, JointKind::Spherical) { "'quat'" } else { "'angle'" }
                    )))
                }
            };
            if slots[slot].replace(value).is_some() {
                return Err(Error::Structural(format!("joint '{}' listed twice", rec.name)));
            }
        }
        let joint_rotations = slots
            .into_iter()
            .enumerate()
            .map(|(slot, r)| {
                r.ok_or_else(|| {
                    let name = skeleton
                        .joints()
                        .iter()
                        .enumerate()
                        .find(|(i, _)| skeleton.rotation_slot(*i) == Some(slot))
                        .map(|(_, j)| j.name.clone())
                        .unwrap_or_default();
                    Error::Structural(format!("joint '{name}' is missing"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = self.root_translation;
        let pose = Pose {
            root_translation: Vec3::new(t[0], t[1], t[2]),
            root_orientation: quat(self.root_orientation, "root orientation")?,
            joint_rotations,
        };
        pose.validate(skeleton)?;
        Ok(pose)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub time_step: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observation: Vec<f64>,
    pub pose: PoseRecord,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub action: Vec<f64>,
    #[serde(default)]
    pub task_reward: f64,
}

pub fn parse_frames(text: &str) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("line {}: {e}", n + 1)))?;
        frames.push(rec);
    }
    Ok(frames)
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        frames.push(rec);
    }
    Ok(frames)
}

pub fn write_frames(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits frames into runs: a new run starts whenever `time_step` does not
/// increase, and every run is cut into chunks of at most `max_len` frames.
/// Returns index ranges into `frames`.
pub fn segment_ranges(frames: &[FrameRecord], max_len: usize) -> Vec<std::ops::Range<usize>> {
    assert!(max_len > 0);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        let boundary = i == frames.len() || frames[i].time_step <= frames[i - 1].time_step || i - start == max_len;
        if boundary {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Poses of `frames`, checked against `skeleton`; errors name the line.
pub fn frames_to_poses(frames: &[FrameRecord], skeleton: &SkeletonSpec) -> Result<Vec<Pose>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.pose
                .to_pose(skeleton)
                .map_err(|e| Error::Input(format!("frame {} (time_step {}): {e}", i + 1, f.time_step)))
        })
        .collect()
}

/// Segments of `frames` as [`TrajectorySegment`]s, with their ranges.
pub fn frames_to_segments(
    frames: &[FrameRecord],
    skeleton: &SkeletonSpec,
    max_len: usize,
) -> Result<Vec<(std::ops::Range<usize>, TrajectorySegment)>> {
    let poses = frames_to_poses(frames, skeleton)?;
    segment_ranges(frames, max_len)
        .into_iter()
        .map(|r| Ok((r.clone(), TrajectorySegment::new(poses[r].to_vec())?)))
        .collect()
}
