//! Desk-scale planar environments that expose robot poses.
//!
//! [`PlanarSim`] integrates a tree of rigid links moving in the x-z plane,
//! with a point mass at each link tip. Coordinates are absolute link angles
//! (rotation about +y). Tasks wrap the simulator, define rewards and map the
//! simulator state to a pose on a robot skeleton.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rotation::{self, Vec3};
use crate::skeleton::{JointRotation, Pose, SkeletonSpec};

pub const GRAVITY: f64 = 9.81;
/// Control period, seconds.
pub const DT: f64 = 0.025;
pub const SUBSTEPS: usize = 10;
pub const TASKS: [&str; 3] = ["planar_stand", "planar_walk", "pendulum_balance"];

/// One rigid link. Its base sits at the tip of link `attach` (or at the
/// anchor); its direction at angle `phi` is `R_y(phi) * dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub length: f64,
    /// Point mass at the tip, kilograms.
    pub mass: f64,
    /// Rotational inertia about the base, kg m^2.
    pub inertia: f64,
    /// Unit direction in the x-z plane at angle zero, as `(x, z)`.
    pub dir: [f64; 2],
    pub attach: Option<usize>,
    /// Link the actuated joint acts against; `None` means the ground.
    pub joint_parent: Option<usize>,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactModel {
    pub stiffness: f64,
    pub damping: f64,
    /// Tangential viscous coefficient, bounded by `friction * normal force`.
    pub tangential: f64,
    pub friction: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            stiffness: 2.0e4,
            damping: 400.0,
            tangential: 400.0,
            friction: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanarSim {
    pub links: Vec<Link>,
    /// Ground-pinned base of the root links, `(x, z)`.
    pub anchor: [f64; 2],
    pub gravity: f64,
    /// Links whose tips collide with the ground plane `z = 0`.
    pub contact_tips: Vec<usize>,
    pub contact: ContactModel,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

fn rot(dir: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c]
}

impl PlanarSim {
    pub fn new(links: Vec<Link>, anchor: [f64; 2]) -> Self {
        for (i, l) in links.iter().enumerate() {
            assert!(l.attach.is_none_or(|a| a < i), "links must be topologically ordered");
        }
        let n = links.len();
        Self {
            links,
            anchor,
            gravity: GRAVITY,
            contact_tips: Vec::new(),
            contact: ContactModel::default(),
            q: vec![0.0; n],
            qd: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Unit direction of every link.
    pub fn directions(&self, q: &[f64]) -> Vec<[f64; 2]> {
        self.links.iter().zip(q).map(|(l, &p)| rot(l.dir, p)).collect()
    }

    pub fn base_of(&self, tips: &[[f64; 2]], i: usize) -> [f64; 2] {
        match self.links[i].attach {
            Some(a) => tips[a],
            None => self.anchor,
        }
    }

    /// Tip position of every link.
    pub fn tips(&self, q: &[f64]) -> Vec<[f64; 2]> {
        let dirs = self.directions(q);
        let mut tips: Vec<[f64; 2]> = Vec::with_capacity(self.len());
        for (i, l) in self.links.iter().enumerate() {
            let b = self.base_of(&tips, i);
            tips.push([b[0] + l.length * dirs[i][0], b[1] + l.length * dirs[i][1]]);
        }
        tips
    }

    /// `chains[l]` lists the links whose angles move the tip of `l`.
    fn chains(&self) -> Vec<Vec<usize>> {
        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(self.len());
        for (i, l) in self.links.iter().enumerate() {
            let mut c = match l.attach {
                Some(a) => chains[a].clone(),
                None => Vec::new(),
            };
            c.push(i);
            chains.push(c);
        }
        chains
    }

    /// Tip velocities for joint rates `qd`.
    pub fn tip_velocities(&self, q: &[f64], qd: &[f64]) -> Vec<[f64; 2]> {
        let dirs = self.directions(q);
        self.chains()
            .iter()
            .map(|chain| {
                let mut v = [0.0; 2];
                for &k in chain {
                    let len = self.links[k].length;
                    v[0] += len * dirs[k][1] * qd[k];
                    v[1] -= len * dirs[k][0] * qd[k];
                }
                v
            })
            .collect()
    }

    pub fn kinetic_energy(&self) -> f64 {
        let v = self.tip_velocities(&self.q, &self.qd);
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| 0.5 * l.mass * (v[i][0].powi(2) + v[i][1].powi(2)) + 0.5 * l.inertia * self.qd[i].powi(2))
            .sum()
    }

    pub fn potential_energy(&self) -> f64 {
        let tips = self.tips(&self.q);
        self.links.iter().zip(&tips).map(|(l, p)| l.mass * self.gravity * p[1]).sum()
    }

    pub fn energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy()
    }

    fn accelerations(&self, torques: &[f64]) -> Vec<f64> {
        let n = self.len();
        let (q, qd) = (&self.q, &self.qd);
        let dirs = self.directions(q);
        let chains = self.chains();
        let tips = self.tips(q);
        let vels = self.tip_velocities(q, qd);
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut f = DVector::<f64>::zeros(n);
        for (l, chain) in chains.iter().enumerate() {
            let link = &self.links[l];
            // acceleration of the tip that does not depend on qdd
            let mut centripetal = [0.0; 2];
            for &k in chain {
                let len = self.links[k].length;
                centripetal[0] += len * dirs[k][0] * qd[k] * qd[k];
                centripetal[1] += len * dirs[k][1] * qd[k] * qd[k];
            }
            let mut force = [0.0, -link.mass * self.gravity];
            if self.contact_tips.contains(&l) && tips[l][1] < 0.0 {
                let c = &self.contact;
                let normal = (-c.stiffness * tips[l][1] - c.damping * vels[l][1]).max(0.0);
                let tangential = (-c.tangential * vels[l][0]).clamp(-c.friction * normal, c.friction * normal);
                force[0] += tangential;
                force[1] += normal;
            }
            for &j in chain {
                let lj = self.links[j].length;
                let jac = [lj * dirs[j][1], -lj * dirs[j][0]];
                f[j] += jac[0] * (force[0] + link.mass * centripetal[0]) + jac[1] * (force[1] + link.mass * centripetal[1]);
                for &k in chain {
                    let lk = self.links[k].length;
                    let dot = dirs[j][0] * dirs[k][0] + dirs[j][1] * dirs[k][1];
                    m[(j, k)] += link.mass * lj * lk * dot;
                }
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            m[(i, i)] += link.inertia;
            let rel_rate = qd[i] - link.joint_parent.map_or(0.0, |p| qd[p]);
            let tau = torques[i] - link.damping * rel_rate;
            f[i] += tau;
            if let Some(p) = link.joint_parent {
                f[p] -= tau;
            }
        }
        let chol = m.cholesky().expect("mass matrix is positive definite");
        chol.solve(&f).iter().copied().collect()
    }

    /// Advances by `dt` with `substeps` semi-implicit Euler steps; `torques`
    /// holds one joint torque per link.
    pub fn step(&mut self, torques: &[f64], dt: f64, substeps: usize) {
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            let qdd = self.accelerations(torques);
            for i in 0..self.len() {
                self.qd[i] += h * qdd[i];
                self.q[i] += h * self.qd[i];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|x| x.is_finite())
    }
}

/// Observation, robot pose and step counter after a reset or step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub robot_pose: Pose,
    pub time_step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    /// The termination predicate fired (no bootstrapping past this step).
    pub terminated: bool,
    /// The episode hit its step limit.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: &'static str,
    pub robot: &'static str,
    /// Bundled mapping that retargets this robot onto the human skeleton.
    pub mapping: &'static str,
    pub observation_dim: usize,
    pub action_dim: usize,
    /// Per-step task reward range.
    pub reward_range: [f64; 2],
    pub episode_length: usize,
    pub lambda_default: f64,
    pub q_default: f64,
}

impl TaskSpec {
    /// Largest achievable task return over one episode.
    pub fn max_episode_return(&self) -> f64 {
        self.reward_range[1] * self.episode_length as f64
    }
}

pub fn extract_robot_pose(state: &EnvState) -> Pose {
    state.robot_pose.clone()
}

pub trait Environment: Send {
    fn spec(&self) -> &TaskSpec;
    fn robot(&self) -> &Arc<SkeletonSpec>;
    fn reset(&mut self, seed: u64) -> EnvState;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    fn state(&self) -> EnvState;
    /// The simulator behind the task.
    fn sim(&self) -> &PlanarSim;
}

/// Builds a registered task with an episode limit of `episode_length` steps.
pub fn make_env(name: &str, episode_length: usize) -> Result<Box<dyn Environment>> {
    if episode_length == 0 {
        return Err(Error::Config("episode length must be >= 1".into()));
    }
    Ok(match name {
        "planar_stand" => Box::new(Biped::new(false, episode_length)?),
        "planar_walk" => Box::new(Biped::new(true, episode_length)?),
        "pendulum_balance" => Box::new(Pendulum::new(episode_length)?),
        other => {
            return Err(Error::Config(format!(
                "unknown task '{other}' (known: {})",
                TASKS.join(", ")
            )))
        }
    })
}

pub fn task_spec(name: &str) -> Result<TaskSpec> {
    Ok(make_env(name, 1000)?.spec().clone())
}

/// `1` inside `[lo, hi]`, falling linearly to `0` over `margin` outside.
fn tolerance(x: f64, lo: f64, hi: f64, margin: f64) -> f64 {
    let d = if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    };
    (1.0 - d / margin).max(0.0)
}

fn clamp_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::Structural(format!("action has {} entries, expected {dim}", action.len())));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input("action holds non-finite values".into()));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

const THIGH: f64 = 0.45;
const SHANK: f64 = 0.45;
const TORSO: f64 = 0.6;
const HIP_MASS: f64 = 10.0;
const HEAD_MASS: f64 = 15.0;
const KNEE_MASS: f64 = 4.0;
const FOOT_MASS: f64 = 1.0;
const JOINT_DAMPING: f64 = 25.0;
/// Hip height below which a biped episode terminates.
const FALL_HEIGHT: f64 = 0.55;

/// Five-link planar biped with the stance foot pinned to the ground.
///
/// Links: stance shank, stance thigh, torso, swing thigh, swing shank.
/// Actions (in `[-1, 1]`, scaled by `gear`): left hip, left knee, right hip,
/// right knee, stance ankle.
pub struct Biped {
    spec: TaskSpec,
    robot: Arc<SkeletonSpec>,
    sim: PlanarSim,
    walking: bool,
    stance_left: bool,
    time_step: usize,
    done: bool,
    gear: [f64; 5],
}

impl Biped {
    fn new(walking: bool, episode_length: usize) -> Result<Self> {
        let robot = Arc::new(SkeletonSpec::resolve("planar_biped")?);
        let up = [0.0, 1.0];
        let down = [0.0, -1.0];
        let link = |length: f64, mass: f64, dir, attach, joint_parent, damping| Link {
            length,
            mass,
            inertia: 0.02,
            dir,
            attach,
            joint_parent,
            damping,
        };
        let mut sim = PlanarSim::new(
            vec![
                link(SHANK, KNEE_MASS, up, None, None, JOINT_DAMPING),
                link(THIGH, HIP_MASS, up, Some(0), Some(0), JOINT_DAMPING),
                link(TORSO, HEAD_MASS, up, Some(1), Some(1), JOINT_DAMPING),
                link(THIGH, KNEE_MASS, down, Some(1), Some(2), JOINT_DAMPING),
                link(SHANK, FOOT_MASS, down, Some(3), Some(3), JOINT_DAMPING),
            ],
            [0.0, 0.0],
        );
        sim.contact_tips = vec![4];
        let spec = TaskSpec {
            name: if walking { "planar_walk" } else { "planar_stand" },
            robot: "planar_biped",
            mapping: "planar_biped",
            observation_dim: 17,
            action_dim: 5,
            reward_range: [0.0, 1.0],
            episode_length,
            lambda_default: 1.0,
            q_default: 750.0,
        };
        let mut env = Self {
            spec,
            robot,
            sim,
            walking,
            stance_left: true,
            time_step: 0,
            done: false,
            gear: [120.0, 120.0, 120.0, 120.0, 150.0],
        };
        env.reset(0);
        Ok(env)
    }

    fn hip(&self) -> [f64; 2] {
        self.sim.tips(&self.sim.q)[1]
    }

    fn pose(&self) -> Pose {
        let q = &self.sim.q;
        let hip = self.hip();
        let (stance_hip, stance_knee) = (q[1] - q[2], q[0] - q[1]);
        let (swing_hip, swing_knee) = (q[3] - q[2], q[4] - q[3]);
        let (l, r) = if self.stance_left {
            ((stance_hip, stance_knee), (swing_hip, swing_knee))
        } else {
            ((swing_hip, swing_knee), (stance_hip, stance_knee))
        };
        Pose {
            root_translation: Vec3::new(hip[0] - self.sim.anchor[0], 0.0, hip[1] - self.sim.anchor[1]),
            root_orientation: rotation::from_axis_angle(&Vec3::y(), q[2]),
            joint_rotations: vec![
                JointRotation::Angle(l.0),
                JointRotation::Angle(l.1),
                JointRotation::Angle(r.0),
                JointRotation::Angle(r.1),
            ],
        }
    }

    fn observation(&self, pose: &Pose) -> Vec<f64> {
        let q = &self.sim.q;
        let tips = self.sim.tips(q);
        let vel = self.sim.tip_velocities(q, &self.sim.qd);
        let mut obs = Vec::with_capacity(self.spec.observation_dim);
        obs.push(q[2]);
        for r in &pose.joint_rotations {
            if let JointRotation::Angle(a) = r {
                obs.push(*a);
            }
        }
        obs.push(q[0]);
        obs.push(pose.root_translation.x);
        obs.push(pose.root_translation.z);
        obs.extend(self.sim.qd.iter().map(|w| 0.1 * w));
        obs.push(vel[1][0]);
        obs.push(tips[4][1] - self.sim.anchor[1]);
        obs.push(tips[4][0] - self.sim.anchor[0]);
        obs.push(if self.stance_left { 1.0 } else { -1.0 });
        obs
    }

    fn torques(&self, action: &[f64]) -> Vec<f64> {
        let g = &self.gear;
        let (l_hip, l_knee, r_hip, r_knee, ankle) = (action[0] * g[0], action[1] * g[1], action[2] * g[2], action[3] * g[3], action[4] * g[4]);
        let ((sh, sk), (wh, wk)) = if self.stance_left {
            ((l_hip, l_knee), (r_hip, r_knee))
        } else {
            ((r_hip, r_knee), (l_hip, l_knee))
        };
        // a joint angle `child - parent` on the stance side is `parent - child`
        // in simulator links, so those torques flip sign
        vec![ankle, -sk, -sh, wh, wk]
    }

    fn reward(&self) -> f64 {
        let hip = self.hip();
        let height = tolerance(hip[1] - self.sim.anchor[1], 0.85, f64::INFINITY, 0.3);
        let upright = (1.0 + self.sim.q[2].cos()) / 2.0;
        let stand = height * upright;
        if !self.walking {
            return stand;
        }
        let vx = self.sim.tip_velocities(&self.sim.q, &self.sim.qd)[1][0];
        stand * (0.2 + 0.8 * tolerance(vx, 0.5, f64::INFINITY, 0.5))
    }

    fn maybe_switch_stance(&mut self) {
        let tips = self.sim.tips(&self.sim.q);
        let foot = tips[4];
        let vel = self.sim.tip_velocities(&self.sim.q, &self.sim.qd)[4];
        if foot[1] <= 0.0 && vel[1] <= 0.0 && foot[0] > self.sim.anchor[0] + 0.1 {
            let q = self.sim.q.clone();
            let qd = self.sim.qd.clone();
            self.sim.q = vec![q[4], q[3], q[2], q[1], q[0]];
            self.sim.qd = vec![qd[4], qd[3], qd[2], qd[1], qd[0]];
            self.sim.anchor = [foot[0], 0.0];
            self.stance_left = !self.stance_left;
        }
    }
}

impl Environment for Biped {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn robot(&self) -> &Arc<SkeletonSpec> {
        &self.robot
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sim.anchor = [0.0, 0.0];
        self.stance_left = true;
        for i in 0..5 {
            self.sim.q[i] = rng.random_range(-0.05..0.05);
            self.sim.qd[i] = 0.0;
        }
        self.time_step = 0;
        self.done = false;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode; reset first".into()));
        }
        let action = clamp_action(action, self.spec.action_dim)?;
        let torques = self.torques(&action);
        self.sim.step(&torques, DT, SUBSTEPS);
        if !self.sim.is_finite() {
            return Err(Error::TrainingFault("simulator state became non-finite".into()));
        }
        if self.walking {
            self.maybe_switch_stance();
        }
        self.time_step += 1;
        let reward = self.reward();
        let terminated = self.hip()[1] - self.sim.anchor[1] < FALL_HEIGHT;
        let truncated = self.time_step >= self.spec.episode_length;
        self.done = terminated || truncated;
        Ok(StepOutcome {
            state: self.state(),
            reward,
            terminated,
            truncated,
        })
    }

    fn state(&self) -> EnvState {
        let robot_pose = self.pose();
        EnvState {
            observation: self.observation(&robot_pose),
            robot_pose,
            time_step: self.time_step,
        }
    }

    fn sim(&self) -> &PlanarSim {
        &self.sim
    }
}

const PENDULUM_LINK: f64 = 0.5;
const PENDULUM_MASS: f64 = 2.0;

/// Three-link pendulum hinged at the ground, to be held upright.
pub struct Pendulum {
    spec: TaskSpec,
    robot: Arc<SkeletonSpec>,
    sim: PlanarSim,
    time_step: usize,
    done: bool,
    gear: [f64; 3],
}

impl Pendulum {
    fn new(episode_length: usize) -> Result<Self> {
        let robot = Arc::new(SkeletonSpec::resolve("pendulum3")?);
        let links = (0..3)
            .map(|i| Link {
                length: PENDULUM_LINK,
                mass: PENDULUM_MASS,
                inertia: 0.01,
                dir: [0.0, 1.0],
                attach: if i == 0 { None } else { Some(i - 1) },
                joint_parent: if i == 0 { None } else { Some(i - 1) },
                damping: 0.5,
            })
            .collect();
        let spec = TaskSpec {
            name: "pendulum_balance",
            robot: "pendulum3",
            mapping: "pendulum3",
            observation_dim: 8,
            action_dim: 3,
            reward_range: [0.0, 1.0],
            episode_length,
            lambda_default: 0.5,
            q_default: 750.0,
        };
        let mut env = Self {
            spec,
            robot,
            sim: PlanarSim::new(links, [0.0, 0.0]),
            time_step: 0,
            done: false,
            gear: [60.0, 40.0, 20.0],
        };
        env.reset(0);
        Ok(env)
    }

    fn pose(&self) -> Pose {
        let q = &self.sim.q;
        Pose {
            root_translation: Vec3::zeros(),
            root_orientation: rotation::Quat::identity(),
            joint_rotations: vec![
                JointRotation::Angle(q[0]),
                JointRotation::Angle(q[1] - q[0]),
                JointRotation::Angle(q[2] - q[1]),
            ],
        }
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn robot(&self) -> &Arc<SkeletonSpec> {
        &self.robot
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..3 {
            self.sim.q[i] = rng.random_range(-0.1..0.1);
            self.sim.qd[i] = 0.0;
        }
        self.time_step = 0;
        self.done = false;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode; reset first".into()));
        }
        let action = clamp_action(action, self.spec.action_dim)?;
        let torques: Vec<f64> = action.iter().zip(&self.gear).map(|(a, g)| a * g).collect();
        self.sim.step(&torques, DT, SUBSTEPS);
        if !self.sim.is_finite() {
            return Err(Error::TrainingFault("simulator state became non-finite".into()));
        }
        self.time_step += 1;
        let tip = self.sim.tips(&self.sim.q)[2][1];
        let reward = (tip / (3.0 * PENDULUM_LINK)).clamp(0.0, 1.0).powi(2);
        let truncated = self.time_step >= self.spec.episode_length;
        self.done = truncated;
        Ok(StepOutcome {
            state: self.state(),
            reward,
            terminated: false,
            truncated,
        })
    }

    fn state(&self) -> EnvState {
        let robot_pose = self.pose();
        let mut observation = Vec::with_capacity(8);
        for r in &robot_pose.joint_rotations {
            if let JointRotation::Angle(a) = r {
                observation.push(*a);
            }
        }
        observation.extend(self.sim.qd.iter().map(|w| 0.1 * w));
        let tip = self.sim.tips(&self.sim.q)[2];
        observation.push(tip[0]);
        observation.push(tip[1]);
        EnvState {
            observation,
            robot_pose,
            time_step: self.time_step,
        }
    }

    fn sim(&self) -> &PlanarSim {
        &self.sim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::forward_kinematics;

    #[test]
    fn reset_is_deterministic_and_clears_time() {
        for name in TASKS {
            let mut env = make_env(name, 1000).unwrap();
            let a = env.reset(7);
            env.step(&vec![0.3; env.spec().action_dim]).unwrap();
            let b = env.reset(7);
            assert_eq!(a, b, "{name}");
            assert_eq!(b.time_step, 0);
            assert_eq!(a.observation.len(), env.spec().observation_dim);
        }
    }

    #[test]
    fn pose_angles_match_observation() {
        let mut env = make_env("planar_stand", 1000).unwrap();
        let s = env.reset(3);
        let pose = extract_robot_pose(&s);
        for (k, r) in pose.joint_rotations.iter().enumerate() {
            assert_eq!(*r, JointRotation::Angle(s.observation[1 + k]));
        }
        assert!(pose.joint_rotations.iter().all(|r| match r {
            JointRotation::Angle(a) => a.abs() < 0.2,
            _ => false,
        }));
    }

    #[test]
    fn biped_fk_matches_simulator() {
        let mut env = make_env("planar_walk", 1000).unwrap();
        env.reset(11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-0.3..0.3)).collect();
            let out = env.step(&a).unwrap();
            let robot = env.robot().clone();
            let fk = forward_kinematics(&robot, &out.state.robot_pose).unwrap();
            let sim = env.sim();
            let tips = sim.tips(&sim.q);
            let anchor = sim.anchor;
            let stance_left = out.state.observation[16] > 0.0;
            let (stance, swing) = if stance_left { ("l", "r") } else { ("r", "l") };
            let at = |name: &str| fk[robot.joint_index(name).unwrap()].position;
            let check = |p: Vec3, t: [f64; 2]| {
                assert!((p.x - (t[0] - anchor[0])).abs() < 1e-9 && (p.z - (t[1] - anchor[1])).abs() < 1e-9);
            };
            check(at(&format!("{stance}_knee")), tips[0]);
            check(at(&format!("{stance}_hip")), tips[1]);
            check(at("head"), tips[2]);
            check(at(&format!("{swing}_knee")), tips[3]);
            check(at(&format!("{swing}_foot")), tips[4]);
            check(at(&format!("{stance}_foot")), anchor);
            if out.done() {
                break;
            }
        }
    }

    #[test]
    fn pendulum_fk_matches_simulator() {
        let mut env = make_env("pendulum_balance", 1000).unwrap();
        env.reset(2);
        for _ in 0..30 {
            let out = env.step(&[0.2, -0.5, 0.1]).unwrap();
            let robot = env.robot().clone();
            let fk = forward_kinematics(&robot, &out.state.robot_pose).unwrap();
            let tips = env.sim().tips(&env.sim().q);
            for (name, t) in [("hinge2", tips[0]), ("hinge3", tips[1]), ("tip", tips[2])] {
                let p = fk[robot.joint_index(name).unwrap()].position;
                assert!((p.x - t[0]).abs() < 1e-9 && (p.z - t[1]).abs() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn balanced_pendulum_stays_put() {
        let mut env = make_env("pendulum_balance", 1000).unwrap();
        env.reset(0);
        let mut sim = env.sim().clone();
        sim.q = vec![0.0; 3];
        sim.qd = vec![0.0; 3];
        for _ in 0..100 {
            sim.step(&[0.0; 3], DT, SUBSTEPS);
        }
        assert!(sim.q.iter().chain(&sim.qd).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn episode_is_capped_and_done_is_sticky() {
        let mut env = make_env("pendulum_balance", 25).unwrap();
        env.reset(0);
        let mut n = 0;
        loop {
            n += 1;
            if env.step(&[0.0; 3]).unwrap().done() {
                break;
            }
        }
        assert_eq!(n, 25);
        assert!(matches!(env.step(&[0.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn biped_falls_without_control() {
        let mut env = make_env("planar_stand", 1000).unwrap();
        env.reset(1);
        let mut steps = 0;
        while !env.step(&[0.0; 5]).unwrap().done() {
            steps += 1;
        }
        assert!(steps < 1000);
    }

    #[test]
    fn unknown_task() {
        assert!(matches!(make_env("nope", 10), Err(Error::Config(_))));
    }
}
