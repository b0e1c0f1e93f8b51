//! Maps a small humanoid's joint angles onto the human skeleton and shows
//! how each revolute triple becomes one spherical rotation.

use std::f64::consts::FRAC_PI_2;

use stabshape::retarget::{compose_revolute_triple, map_robot_to_human, validate_mapping, MappingTable};
use stabshape::rotation::{self, Vec3};
use stabshape::skeleton::{zero_pose, JointRotation};

fn main() -> stabshape::Result<()> {
    let table = MappingTable::resolve("mini_humanoid")?;
    let violations = validate_mapping(&table);
    println!(
        "mapping {} -> {}: {} entries, {} violations",
        table.robot().name(),
        table.human().name(),
        table.entries().len(),
        violations.len()
    );

    let robot = table.robot().clone();
    let mut pose = zero_pose(&robot);
    for (name, angle) in [("l_shoulder_pitch", 0.8), ("l_shoulder_roll", 0.3), ("l_elbow", 1.1), ("r_knee", 0.5)] {
        if let Some(slot) = robot.joint_index(name).and_then(|i| robot.rotation_slot(i)) {
            pose.joint_rotations[slot] = JointRotation::Angle(angle);
        }
    }
    let human_pose = map_robot_to_human(&table, &pose)?;
    let human = table.human();
    println!("\n{:<14} {:>10}", "human joint", "angle (rad)");
    for (i, joint) in human.joints().iter().enumerate() {
        let Some(slot) = human.rotation_slot(i) else { continue };
        let angle = match human_pose.joint_rotations[slot] {
            JointRotation::Angle(a) => a.abs(),
            JointRotation::Quat(q) => q.angle(),
        };
        if angle > 1e-12 {
            println!("{:<14} {:>10.4}", joint.name, angle);
        }
    }

    // a quarter turn about each axis, applied x then y then z
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let q = compose_revolute_triple([FRAC_PI_2; 3], axes, [0, 1, 2])?;
    let by_hand = rotation::from_axis_angle(&Vec3::z(), FRAC_PI_2)
        * rotation::from_axis_angle(&Vec3::y(), FRAC_PI_2)
        * rotation::from_axis_angle(&Vec3::x(), FRAC_PI_2);
    println!("\ntriple vs explicit product: {:.2e} rad apart", rotation::geodesic(&q, &by_hand));
    Ok(())
}
