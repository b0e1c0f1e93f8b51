//! Scores robot segments that drift off their footprint by how much
//! stabilization changes them, then fuses a score with a task reward at
//! several shaping weights.

use stabshape::reward::{combine_rewards, segment_rewards, stabilizing_reward, RewardParams};
use stabshape::retarget::MappingTable;
use stabshape::skeleton::{zero_pose, JointRotation, TrajectorySegment};
use stabshape::stabilizer::StabilizerConfig;

fn main() -> stabshape::Result<()> {
    let table = MappingTable::resolve("planar_biped")?;
    let params = RewardParams::default();
    let joints = params.participating_indices(table.human())?;
    let stabilizer = StabilizerConfig::default().build(table.human().clone(), 145)?;

    for (label, drift) in [("centered", 0.0), ("drift 0.6 m", 0.6), ("drift 1.0 m", 1.0)] {
        let robot = table.robot();
        let poses = (0..40)
            .map(|t| {
                let mut p = zero_pose(robot);
                p.root_translation.x = drift * t as f64 / 40.0;
                for r in p.joint_rotations.iter_mut() {
                    *r = JointRotation::Angle(0.2);
                }
                p
            })
            .collect();
        let seg = TrajectorySegment::new(poses)?;
        let scored = segment_rewards(&seg, &table, stabilizer.as_ref(), &params, &joints)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let rewarded = scored.stabilizing.iter().filter(|&&r| r > 0.0).count();
        println!(
            "{label:<11} mean similarity {:.3} of {:.1}, mean stabilizing reward {:.3}, {rewarded}/{} frames rewarded",
            mean(&scored.similarity),
            params.r_j * joints.len() as f64,
            mean(&scored.stabilizing),
            scored.stabilizing.len()
        );
    }

    println!("\nthreshold {}: similarity 1.8 earns {}, 1.2 earns {}", params.t_s, stabilizing_reward(1.8, &params), stabilizing_reward(1.2, &params));
    println!("task reward 0.8 with a stabilizing reward of 1.8:");
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let p = RewardParams { lambda, ..params.clone() };
        println!("  lambda {lambda:<4} -> {:.4}", combine_rewards(0.8, 1.8, &p));
    }
    Ok(())
}
