//! Stability-shaped reinforcement learning for articulated agents.
//!
//! Robot poses are retargeted onto a canonical human skeleton
//! ([`retarget`]), stabilized segment by segment by a motion reconstructor
//! ([`stabilizer`]), scored by how little the reconstruction had to change
//! them ([`reward`]) and fused with the task reward to train a latent-model
//! planner ([`policy`], [`trainer`]) on small planar tasks ([`env`]).
//!
//! The examples directory walks through each stage:
//!
//! - `forward_kinematics`: skeletons, poses and centers of mass
//! - `retarget_humanoid`: robot-to-human pose mapping
//! - `stabilize_segment`: balance projection with per-frame diagnostics
//! - `stabilizing_reward`: joint similarity, thresholds and reward fusion
//! - `plan_lq_toy`: the cross-entropy planner on a linear-quadratic problem
//! - `env_rollout_dump`: rolling out a task and writing a trajectory file
//! - `train_pendulum`: a short training run with artifacts
//! - `lambda_sweep`: the shaping-weight sweep

pub mod assets;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod retarget;
pub mod reward;
pub mod rotation;
pub mod skeleton;
pub mod stabilizer;
pub mod trainer;
pub mod traj;

pub use error::{Error, Result};
