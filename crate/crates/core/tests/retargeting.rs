mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{axis_angle_matrix, decompose_triple, quat_of, random_frame, random_pose};
use stabshape::retarget::{compose_revolute_triple, map_robot_to_human, map_segment, validate_mapping, MappingTable};
use stabshape::rotation::{self, Vec3};
use stabshape::skeleton::{zero_pose, TrajectorySegment};

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[test]
fn bundled_mappings_are_valid_and_fix_the_zero_pose() {
    for name in stabshape::assets::MAPPINGS {
        let table = MappingTable::resolve(name).unwrap();
        assert!(validate_mapping(&table).is_empty(), "{name}");
        let human = map_robot_to_human(&table, &zero_pose(table.robot())).unwrap();
        assert_eq!(human, zero_pose(table.human()), "{name}");
    }
}

#[test]
fn segment_mapping_matches_per_pose_mapping() {
    let table = MappingTable::resolve("mini_humanoid").unwrap();
    let mut rng = common::rng(5);
    let poses: Vec<_> = (0..12).map(|_| random_pose(table.robot(), 0.8, &mut rng)).collect();
    let seg = map_segment(&table, &TrajectorySegment::new(poses.clone()).unwrap()).unwrap();
    assert_eq!(seg.len(), poses.len());
    for (p, h) in poses.iter().zip(seg.poses()) {
        assert_eq!(&map_robot_to_human(&table, p).unwrap(), h);
    }
}

#[test]
fn single_axis_triple_is_that_rotation() {
    let q = compose_revolute_triple([std::f64::consts::FRAC_PI_2, 0.0, 0.0], [Vec3::x(), Vec3::y(), Vec3::z()], [0, 1, 2]).unwrap();
    let expected = rotation::from_axis_angle(&Vec3::x(), std::f64::consts::FRAC_PI_2);
    assert!(rotation::geodesic(&q, &expected) < 1e-12);
}

#[test]
fn parallel_axes_are_rejected() {
    let err = compose_revolute_triple([0.1, 0.2, 0.3], [Vec3::x(), Vec3::x(), Vec3::z()], [0, 1, 2]);
    assert!(matches!(err, Err(stabshape::Error::Structural(_))));
}

#[test]
fn triple_matches_rodrigues_product() {
    let mut rng = common::rng(17);
    for _ in 0..200 {
        let axes = [0, 1, 2].map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize());
        let angles = [0, 1, 2].map(|_| rng.random_range(-3.0..3.0));
        let order = PERMS[rng.random_range(0..6)];
        let Ok(q) = compose_revolute_triple(angles, axes, order) else { continue };
        let mut m = nalgebra::Matrix3::identity();
        for &k in &order {
            m = axis_angle_matrix(&axes[k], angles[k]) * m;
        }
        assert!(rotation::geodesic(&q, &quat_of(&m)) < 1e-9);
    }
}

proptest! {
    #[test]
    fn triple_round_trip(
        seed in any::<u64>(),
        perm in 0usize..6,
        order in 0usize..6,
        t1 in -3.1f64..3.1,
        t2 in -1.45f64..1.45,
        t3 in -3.1f64..3.1,
    ) {
        let mut rng = common::rng(seed);
        let frame = random_frame(&mut rng);
        let perm = PERMS[perm];
        let order = PERMS[order];
        let applied = [t1, t2, t3];
        let mut axes = [Vec3::zeros(); 3];
        let mut angles = [0.0; 3];
        for k in 0..3 {
            axes[order[k]] = frame * Vec3::ith(perm[k], 1.0);
            angles[order[k]] = applied[k];
        }
        let q = compose_revolute_triple(angles, axes, order).unwrap();
        let m = q.to_rotation_matrix().into_inner();
        let back = decompose_triple(&m, &frame, perm);
        for k in 0..3 {
            prop_assert!((back[k] - applied[k]).abs() < 1e-6, "angle {k}: {} vs {}", back[k], applied[k]);
        }
        let mut again = [0.0; 3];
        for k in 0..3 {
            again[order[k]] = back[k];
        }
        let q2 = compose_revolute_triple(again, axes, order).unwrap();
        prop_assert!(rotation::geodesic(&q, &q2) < 1e-6);
    }

    #[test]
    fn mapping_is_deterministic_and_covers_every_joint(seed in any::<u64>()) {
        let table = MappingTable::resolve("mini_humanoid").unwrap();
        let mut rng = common::rng(seed);
        let pose = random_pose(table.robot(), 1.0, &mut rng);
        let a = map_robot_to_human(&table, &pose).unwrap();
        let b = map_robot_to_human(&table, &pose).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.validate(table.human()).is_ok());
        prop_assert_eq!(a.root_translation, pose.root_translation);
        prop_assert_eq!(a.root_orientation, pose.root_orientation);
    }
}
