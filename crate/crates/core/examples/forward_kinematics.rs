//! Loads the bundled skeletons, bends a few joints and prints world-frame
//! joint positions and the center of mass.

use stabshape::assets::SKELETONS;
use stabshape::rotation::{self, Vec3};
use stabshape::skeleton::{center_of_mass, forward_kinematics, zero_pose, JointRotation, SkeletonSpec};

fn main() -> stabshape::Result<()> {
    for name in SKELETONS {
        let skeleton = SkeletonSpec::resolve(name)?;
        println!("{name}: {} joints, {:.1} kg", skeleton.len(), skeleton.total_mass());
    }

    let human = SkeletonSpec::resolve("human")?;
    let mut pose = zero_pose(&human);
    for (name, angle) in [("l_knee", 0.6), ("r_knee", 0.3), ("spine", 0.2)] {
        let Some(i) = human.joint_index(name) else { continue };
        let Some(slot) = human.rotation_slot(i) else { continue };
        pose.joint_rotations[slot] = match pose.joint_rotations[slot] {
            JointRotation::Angle(_) => JointRotation::Angle(angle),
            JointRotation::Quat(_) => JointRotation::Quat(rotation::from_axis_angle(&Vec3::y(), angle)),
        };
    }

    let joints = forward_kinematics(&human, &pose)?;
    println!("\n{:<14} {:>8} {:>8} {:>8}", "joint", "x", "y", "z");
    for (spec, jp) in human.joints().iter().zip(&joints) {
        let p = jp.position;
        println!("{:<14} {:>8.3} {:>8.3} {:>8.3}", spec.name, p.x, p.y, p.z);
    }
    let com = center_of_mass(&human, &joints)?;
    let rest = center_of_mass(&human, &forward_kinematics(&human, &zero_pose(&human))?)?;
    println!("\ncenter of mass: {:.3} {:.3} {:.3}", com.x, com.y, com.z);
    println!("shift from zero pose: {:.4} m", (com - rest).norm());
    Ok(())
}
