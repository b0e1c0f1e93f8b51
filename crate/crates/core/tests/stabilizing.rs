mod common;

use std::sync::Arc;

use proptest::prelude::*;

use common::{closest_point_on_polygon, noisy_segment, random_pose};
use stabshape::skeleton::{zero_pose, SkeletonSpec, TrajectorySegment};
use stabshape::stabilizer::{
    reconstruct, temporal_roughness, BalanceProjector, IdentityReconstructor, Point2, StabilizerConfig, SupportPolygon,
};

fn projector() -> BalanceProjector {
    let human = Arc::new(SkeletonSpec::resolve("human").unwrap());
    BalanceProjector::new(human, &StabilizerConfig::default(), 145).unwrap()
}

proptest! {
    #[test]
    fn closest_point_matches_edge_scan(
        pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..12),
        px in -4.0f64..4.0,
        py in -4.0f64..4.0,
    ) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let Ok(poly) = SupportPolygon::hull(&pts) else { return Ok(()) };
        let p = Point2::new(px, py);
        let got = poly.closest_point(p);
        let want = closest_point_on_polygon(poly.vertices(), p);
        prop_assert!((got - p).norm() - (want - p).norm() < 1e-9);
        prop_assert!(((got - p).norm() - poly.distance_outside(p)).abs() < 1e-12);
    }

    #[test]
    fn shrunk_polygon_stays_inside(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..10),
        margin in 0.0f64..0.3,
    ) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let Ok(poly) = SupportPolygon::hull(&pts) else { return Ok(()) };
        let shrunk = poly.shrink(margin);
        for v in shrunk.vertices() {
            prop_assert!(poly.contains(*v, 1e-9));
        }
        prop_assert!(shrunk.area() <= poly.area() + 1e-12);
    }

    #[test]
    fn identity_reconstruction_is_bit_identical(seed in any::<u64>(), len in 1usize..40) {
        let human = SkeletonSpec::resolve("human").unwrap();
        let mut rng = common::rng(seed);
        let base = random_pose(&human, 0.5, &mut rng);
        let seg = noisy_segment(&base, &human, len, 0.2, 0.2, &mut rng);
        prop_assert_eq!(reconstruct(&IdentityReconstructor::new(145), &seg).unwrap(), seg);
    }
}

#[test]
fn reference_reconstruction_contract_on_noisy_segments() {
    let proj = projector();
    let human = proj.skeleton().clone();
    let mut rng = common::rng(23);
    for _ in 0..10 {
        let base = random_pose(&human, 0.3, &mut rng);
        let seg = noisy_segment(&base, &human, 60, 0.15, 0.3, &mut rng);
        let out = reconstruct(&proj, &seg).unwrap();
        assert_eq!(out.len(), seg.len());
        for p in out.poses() {
            assert!(proj.com_violation(p) <= 1e-6);
        }
        let again = reconstruct(&proj, &out).unwrap();
        for (a, b) in out.poses().iter().zip(again.poses()) {
            assert!((a.root_translation - b.root_translation).norm() < 1e-6);
        }
        assert!(temporal_roughness(&human, &out) <= temporal_roughness(&human, &seg));
    }
}

#[test]
fn stable_still_segment_is_unchanged() {
    let proj = projector();
    let seg = TrajectorySegment::new(vec![zero_pose(proj.skeleton()); 30]).unwrap();
    let out = reconstruct(&proj, &seg).unwrap();
    for (a, b) in seg.poses().iter().zip(out.poses()) {
        assert!((a.root_translation - b.root_translation).norm() < 1e-12);
    }
}
