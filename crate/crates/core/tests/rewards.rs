mod common;

use proptest::prelude::*;

use stabshape::retarget::MappingTable;
use stabshape::reward::{combine_rewards, joint_distance, pose_similarity, segment_rewards, stabilizing_reward, RewardParams};
use stabshape::rotation::{self, Quat, Vec3};
use stabshape::skeleton::{JointPose, TrajectorySegment};
use stabshape::stabilizer::IdentityReconstructor;

fn at(x: f64, q: Quat) -> JointPose {
    JointPose {
        position: Vec3::new(x, 0.0, 0.0),
        orientation: q,
    }
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_zero_on_the_diagonal(
        x in -1.0f64..1.0,
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
        angle in -3.0f64..3.0,
    ) {
        let a = at(x, rotation::from_axis_angle(&Vec3::new(ax, ay, az), angle));
        let b = at(0.0, Quat::identity());
        prop_assert!(joint_distance(&a, &a).unwrap() < 1e-20);
        prop_assert!((joint_distance(&a, &b).unwrap() - joint_distance(&b, &a).unwrap()).abs() < 1e-12);
        let expected = x * x + angle.abs().powi(2);
        prop_assert!((joint_distance(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_lambda_and_zero_bonus_leave_task_reward(r in -10.0f64..10.0, bonus in 0.0f64..3.0) {
        let mut p = RewardParams::default();
        prop_assert_eq!(combine_rewards(r, 0.0, &p), r);
        p.lambda = 0.0;
        prop_assert_eq!(combine_rewards(r, bonus, &p), r);
    }

    #[test]
    fn stabilizing_reward_is_all_or_nothing(f in 0.0f64..3.0) {
        let p = RewardParams::default();
        let r = stabilizing_reward(f, &p);
        prop_assert!(r == 0.0 || r == f);
        prop_assert_eq!(r == f, f >= p.t_s);
    }
}

#[test]
fn similarity_counts_joints_within_threshold() {
    let p = RewardParams::default();
    let a: Vec<JointPose> = (0..20).map(|_| at(0.0, Quat::identity())).collect();
    let mut b = a.clone();
    let joints: Vec<usize> = (0..20).collect();
    assert!((pose_similarity(&a, &b, &p, &joints).unwrap() - 2.0).abs() < 1e-12);
    for j in b.iter_mut().take(5) {
        j.position.x = 0.5;
    }
    assert!((pose_similarity(&a, &b, &p, &joints).unwrap() - 1.5).abs() < 1e-12);
    assert!(pose_similarity(&a, &b[..19], &p, &joints).is_err());
}

#[test]
fn identity_pipeline_scores_every_frame_maximally() {
    let table = MappingTable::resolve("mini_humanoid").unwrap();
    let params = RewardParams::default();
    let joints = params.participating_indices(table.human()).unwrap();
    let max = joints.iter().fold(0.0, |acc, _| acc + params.r_j);
    let mut rng = common::rng(8);
    let poses: Vec<_> = (0..30).map(|_| common::random_pose(table.robot(), 1.0, &mut rng)).collect();
    let seg = TrajectorySegment::new(poses).unwrap();
    let out = segment_rewards(&seg, &table, &IdentityReconstructor::new(145), &params, &joints).unwrap();
    assert_eq!(out.stabilizing, vec![max; 30]);
}
