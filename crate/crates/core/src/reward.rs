//! Stabilizing reward and its combination with the task reward.
//!
//! A frame earns `r_j` for every participating human joint whose retargeted
//! pose is within `t_j` of its stabilized counterpart. The frame reward is
//! that sum if it reaches `t_s = n_bar * r_j`, and zero otherwise. The
//! training reward is `r_task + lambda * (q / l_e) * r_stab`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retarget::{map_segment, MappingTable};
use crate::rotation;
use crate::skeleton::{forward_kinematics_unchecked, JointPose, SkeletonSpec, TrajectorySegment};
use crate::stabilizer::{reconstruct_padded, MotionReconstructor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Reward per similar joint.
    pub r_j: f64,
    /// Squared joint-distance threshold (inclusive).
    pub t_j: f64,
    /// Frame similarity threshold (inclusive); must equal `n_bar * r_j`.
    pub t_s: f64,
    /// Expected number of similar joints.
    pub n_bar: usize,
    pub lambda: f64,
    /// Expected return of the task.
    pub q: f64,
    /// Maximum episode length, steps.
    pub l_e: usize,
    /// Human joints that count; empty means every joint of the human skeleton.
    pub participating_joints: Vec<String>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            r_j: 0.1,
            t_j: 0.1,
            t_s: 1.5,
            n_bar: 15,
            lambda: 1.0,
            q: 750.0,
            l_e: 1000,
            participating_joints: Vec::new(),
        }
    }
}

impl RewardParams {
    /// Checks every scalar constraint that does not need the skeleton.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.r_j > 0.0 && self.r_j.is_finite()) {
            return bad(format!("reward.r_j must be > 0, got {}", self.r_j));
        }
        if !(self.t_j > 0.0 && self.t_j.is_finite()) {
            return bad(format!("reward.t_j must be > 0, got {}", self.t_j));
        }
        if self.n_bar == 0 {
            return bad("reward.n_bar must be > 0".into());
        }
        if (self.t_s - self.n_bar as f64 * self.r_j).abs() >= 1e-12 {
            return bad(format!(
                "reward.t_s ({}) must equal n_bar * r_j ({})",
                self.t_s,
                self.n_bar as f64 * self.r_j
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("reward.lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad(format!("reward.q must be > 0, got {}", self.q));
        }
        if self.l_e == 0 {
            return bad("reward.l_e must be > 0".into());
        }
        Ok(())
    }

    /// Resolves the participating joints on `human` and checks `n_bar <= N`.
    pub fn participating_indices(&self, human: &SkeletonSpec) -> Result<Vec<usize>> {
        self.validate()?;
        let joints: Vec<usize> = if self.participating_joints.is_empty() {
            (0..human.len()).collect()
        } else {
            let mut out = Vec::with_capacity(self.participating_joints.len());
            for name in &self.participating_joints {
                let i = human
                    .joint_index(name)
                    .ok_or_else(|| Error::Config(format!("reward.participating_joints: unknown joint '{name}'")))?;
                if out.contains(&i) {
                    return Err(Error::Config(format!("reward.participating_joints lists '{name}' twice")));
                }
                out.push(i);
            }
            out
        };
        if self.n_bar > joints.len() {
            return Err(Error::Config(format!(
                "reward.n_bar ({}) exceeds the {} participating joints",
                self.n_bar,
                joints.len()
            )));
        }
        Ok(joints)
    }

    /// `lambda * q / l_e`, the factor applied to the stabilizing reward.
    pub fn shaping_scale(&self) -> f64 {
        self.lambda * (self.q / self.l_e as f64)
    }
}

fn finite_pose(p: &JointPose) -> bool {
    p.position.iter().all(|x| x.is_finite()) && p.orientation.coords.iter().all(|x| x.is_finite())
}

/// Squared norm of `[position difference; log(b^-1 a)]`.
pub fn joint_distance(a: &JointPose, b: &JointPose) -> Result<f64> {
    if !finite_pose(a) || !finite_pose(b) {
        return Err(Error::Input("joint pose holds non-finite values".into()));
    }
    let dp = a.position - b.position;
    let dr = rotation::log_map(&(b.orientation.inverse() * a.orientation));
    Ok(dp.norm_squared() + dr.norm_squared())
}

/// `r_j` if `joint_distance(a, b) <= t_j`, otherwise 0.
pub fn joint_similarity(a: &JointPose, b: &JointPose, params: &RewardParams) -> Result<f64> {
    Ok(if joint_distance(a, b)? <= params.t_j { params.r_j } else { 0.0 })
}

/// Sum of [`joint_similarity`] over `joints`, accumulated in the given order.
pub fn pose_similarity(s_h: &[JointPose], s_hat: &[JointPose], params: &RewardParams, joints: &[usize]) -> Result<f64> {
    if s_h.len() != s_hat.len() {
        return Err(Error::Structural(format!(
            "pose similarity of {} and {} joint poses",
            s_h.len(),
            s_hat.len()
        )));
    }
    if let Some(&bad) = joints.iter().find(|&&j| j >= s_h.len()) {
        return Err(Error::Structural(format!("participating joint {bad} out of range")));
    }
    let mut total = 0.0;
    for &j in joints {
        total += joint_similarity(&s_h[j], &s_hat[j], params)?;
    }
    Ok(total)
}

/// `f_s` if `f_s >= t_s`, otherwise 0.
pub fn stabilizing_reward(f_s: f64, params: &RewardParams) -> f64 {
    if f_s >= params.t_s {
        f_s
    } else {
        0.0
    }
}

/// `r_task + lambda * (q / l_e) * r_stab`.
pub fn combine_rewards(r_task: f64, r_stab: f64, params: &RewardParams) -> f64 {
    r_task + params.shaping_scale() * r_stab
}

/// Per-frame values produced by the reward pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRewards {
    pub similarity: Vec<f64>,
    pub stabilizing: Vec<f64>,
}

/// Retargets, reconstructs and scores a robot segment frame by frame.
///
/// Segments shorter than the reconstructor's minimum length are padded as in
/// [`reconstruct_padded`].
pub fn segment_rewards(
    robot_segment: &TrajectorySegment,
    mapping: &MappingTable,
    reconstructor: &dyn MotionReconstructor,
    params: &RewardParams,
    joints: &[usize],
) -> Result<SegmentRewards> {
    let aligned = map_segment(mapping, robot_segment)?;
    let stable = reconstruct_padded(reconstructor, &aligned)?;
    pair_rewards(mapping.human(), &aligned, &stable, params, joints)
}

/// Scores each aligned human frame against its stabilized counterpart.
pub fn pair_rewards(
    human: &SkeletonSpec,
    aligned: &TrajectorySegment,
    stable: &TrajectorySegment,
    params: &RewardParams,
    joints: &[usize],
) -> Result<SegmentRewards> {
    if aligned.len() != stable.len() {
        return Err(Error::Contract(format!(
            "aligned segment has {} frames, stabilized {}",
            aligned.len(),
            stable.len()
        )));
    }
    let mut similarity = Vec::with_capacity(aligned.len());
    let mut stabilizing = Vec::with_capacity(aligned.len());
    for (a, b) in aligned.poses().iter().zip(stable.poses()) {
        a.validate(human)?;
        b.validate(human)?;
        let fa = forward_kinematics_unchecked(human, a);
        let fb = forward_kinematics_unchecked(human, b);
        let f_s = pose_similarity(&fa, &fb, params, joints)?;
        similarity.push(f_s);
        stabilizing.push(stabilizing_reward(f_s, params));
    }
    Ok(SegmentRewards { similarity, stabilizing })
}

/// The per-frame stabilizing rewards of [`segment_rewards`].
pub fn segment_stabilizing_rewards(
    robot_segment: &TrajectorySegment,
    mapping: &MappingTable,
    reconstructor: &dyn MotionReconstructor,
    params: &RewardParams,
    joints: &[usize],
) -> Result<Vec<f64>> {
    Ok(segment_rewards(robot_segment, mapping, reconstructor, params, joints)?.stabilizing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{Quat, Vec3};
    use std::f64::consts::FRAC_PI_2;

    fn at(x: f64, q: Quat) -> JointPose {
        JointPose {
            position: Vec3::new(x, 0.0, 0.0),
            orientation: q,
        }
    }

    #[test]
    fn distance_examples() {
        let id = Quat::identity();
        assert_eq!(joint_distance(&at(0.0, id), &at(0.0, id)).unwrap(), 0.0);
        assert!((joint_distance(&at(0.3, id), &at(0.0, id)).unwrap() - 0.09).abs() < 1e-12);
        let rz = rotation::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        let d = joint_distance(&at(0.0, rz), &at(0.0, id)).unwrap();
        assert!((d - FRAC_PI_2 * FRAC_PI_2).abs() < 1e-12);
        assert!((d - 2.4674).abs() < 1e-4);
    }

    #[test]
    fn non_finite_distance_is_input_error() {
        let id = Quat::identity();
        assert!(matches!(joint_distance(&at(f64::NAN, id), &at(0.0, id)), Err(Error::Input(_))));
    }

    #[test]
    fn thresholds_are_inclusive() {
        let p = RewardParams::default();
        assert_eq!(stabilizing_reward(1.5, &p), 1.5);
        assert_eq!(stabilizing_reward(1.4, &p), 0.0);
        assert_eq!(stabilizing_reward(2.0, &p), 2.0);
    }

    #[test]
    fn combine_example() {
        let p = RewardParams::default();
        assert!((combine_rewards(2.0, 1.5, &p) - 3.125).abs() < 1e-12);
        let zero = RewardParams { lambda: 0.0, ..p.clone() };
        assert_eq!(combine_rewards(2.0, 1.5, &zero), 2.0);
        assert_eq!(combine_rewards(2.0, 0.0, &p), 2.0);
    }

    #[test]
    fn params_validation() {
        assert!(RewardParams::default().validate().is_ok());
        let bad = RewardParams { t_s: 1.6, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RewardParams { lambda: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RewardParams { n_bar: 0, t_s: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let human = SkeletonSpec::resolve("human").unwrap();
        let few = RewardParams {
            participating_joints: vec!["pelvis".into(), "head".into()],
            ..Default::default()
        };
        assert!(few.participating_indices(&human).is_err());
        assert_eq!(RewardParams::default().participating_indices(&human).unwrap().len(), 22);
    }
}
