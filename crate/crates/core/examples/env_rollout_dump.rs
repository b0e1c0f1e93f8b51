//! Rolls out every task with zero and random actions, then writes a short
//! PlanarStand episode as a trajectory file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stabshape::env::{make_env, TASKS};
use stabshape::traj::{write_frames, FrameRecord, PoseRecord};

fn main() -> stabshape::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for task in TASKS {
        let mut env = make_env(task, 1000)?;
        let dim = env.spec().action_dim;
        for random in [false, true] {
            env.reset(0);
            let (mut total, mut steps) = (0.0, 0);
            loop {
                let action: Vec<f64> = (0..dim).map(|_| if random { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
                let out = env.step(&action)?;
                total += out.reward;
                steps += 1;
                if out.done() {
                    break;
                }
            }
            let label = if random { "random" } else { "zero" };
            println!("{task:<18} {label:<7} {steps:>5} steps, return {total:>7.1} of {}", env.spec().max_episode_return());
        }
    }

    let mut env = make_env("planar_stand", 200)?;
    let skeleton = env.robot().clone();
    env.reset(1);
    let mut frames = Vec::new();
    loop {
        let action = vec![0.0; env.spec().action_dim];
        let out = env.step(&action)?;
        frames.push(FrameRecord {
            time_step: out.state.time_step,
            observation: out.state.observation.clone(),
            pose: PoseRecord::from_pose(&skeleton, &out.state.robot_pose),
            action,
            task_reward: out.reward,
        });
        if out.done() {
            break;
        }
    }
    let path = std::env::temp_dir().join("stand_rollout.jsonl");
    write_frames(&path, &frames)?;
    println!("\nwrote {} frames to {}", frames.len(), path.display());
    Ok(())
}
