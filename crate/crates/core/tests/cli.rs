mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stabshape::retarget::MappingTable;
use stabshape::skeleton::{zero_pose, SkeletonSpec};
use stabshape::traj::{read_frames, write_frames, FrameRecord, PoseRecord};

const TINY: [&str; 14] = [
    "reward.l_e=200",
    "trainer.total_steps=450",
    "trainer.seed_steps=450",
    "trainer.segment_length=40",
    "trainer.eval_interval=450",
    "trainer.batch_size=8",
    "planner.horizon=1",
    "planner.population=8",
    "planner.elites=2",
    "planner.iterations=1",
    "planner.model.latent_dim=4",
    "planner.model.hidden_dim=8",
    "run.dump_episodes=1",
    "run.log_rewards=true",
];

fn stabshape(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabshape"))
        .args(args)
        .env("STABSHAPE_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn with_sets<'a>(base: &[&'a str], sets: &[&'a str]) -> Vec<&'a str> {
    let mut v = base.to_vec();
    for s in sets {
        v.push("--set");
        v.push(s);
    }
    v
}

fn train_tiny(root: &Path, name: &str) -> PathBuf {
    let run_name = format!("run.name={name}");
    let mut sets: Vec<&str> = TINY.to_vec();
    sets.push(&run_name);
    let out = stabshape(root, &with_sets(&["train", "--config", "pendulum"], &sets));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    root.join(name)
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = stabshape(dir.path(), &["train", "--config", "/no/such/config.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/config.toml"), "{}", stderr(&out));
}

#[test]
fn negative_lambda_is_rejected_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = stabshape(dir.path(), &["train", "--config", "stand", "--set", "reward.lambda=-1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));
    assert!(!dir.path().join("stand").exists());
}

#[test]
fn unknown_subcommand_and_key_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stabshape(dir.path(), &["frobnicate"])), 2);
    let out = stabshape(dir.path(), &["inspect-config", "--config", "stand", "--set", "trainer.bogus=1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inspect_config_echo_reloads_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = stabshape(dir.path(), &["inspect-config", "--config", "walk"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let (first, body) = text.split_once('\n').unwrap();
    let hash = first.strip_prefix("# config hash ").unwrap();
    let path = dir.path().join("echo.toml");
    std::fs::write(&path, body).unwrap();
    let again = stabshape(dir.path(), &["inspect-config", "--config", path.to_str().unwrap()]);
    assert!(String::from_utf8(again.stdout).unwrap().starts_with(&format!("# config hash {hash}\n")));
}

#[test]
fn train_eval_and_corrupted_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "tiny");
    for f in ["config.toml", "metrics.csv", "summary.json", "rewards.csv", "checkpoints/final.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("checkpoints/final.json");
    let out = stabshape(dir.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let returns = csv_column(&run.join("eval_final_seed0.csv"), "return");
    assert_eq!(returns.len(), 3);

    let again = stabshape(dir.path(), &with_sets(&["train", "--config", "pendulum"], &["run.name=tiny"]));
    assert_eq!(code(&again), 2, "{}", stderr(&again));

    let text = std::fs::read_to_string(&ckpt).unwrap();
    let bad = run.join("checkpoints/bad.json");
    let digit = text.find(|c: char| c.is_ascii_digit() && c != '0').unwrap();
    let mut corrupted = text.clone();
    corrupted.replace_range(digit..digit + 1, "0");
    std::fs::write(&bad, corrupted).unwrap();
    let out = stabshape(dir.path(), &["eval", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn retargeting_zero_frames_gives_human_zero_frames() {
    let dir = tempfile::tempdir().unwrap();
    let table = MappingTable::resolve("mini_humanoid").unwrap();
    let frames: Vec<FrameRecord> = (0..5)
        .map(|t| FrameRecord {
            time_step: t,
            observation: vec![],
            pose: PoseRecord::from_pose(table.robot(), &zero_pose(table.robot())),
            action: vec![],
            task_reward: 0.0,
        })
        .collect();
    let input = dir.path().join("robot.jsonl");
    let output = dir.path().join("human.jsonl");
    write_frames(&input, &frames).unwrap();
    let out = stabshape(
        dir.path(),
        &["retarget", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(), "--mapping", "mini_humanoid"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let human = SkeletonSpec::resolve("human").unwrap();
    for f in read_frames(&output).unwrap() {
        assert_eq!(f.pose.to_pose(&human).unwrap(), zero_pose(&human));
    }
    assert!(dir.path().join("human.jsonl.diagnostics.csv").is_file());
}

#[test]
fn identity_stabilize_round_trips_and_bad_input_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let human = SkeletonSpec::resolve("human").unwrap();
    let mut rng = common::rng(4);
    let base = common::random_pose(&human, 0.4, &mut rng);
    let seg = common::noisy_segment(&base, &human, 20, 0.1, 0.1, &mut rng);
    let frames: Vec<FrameRecord> = seg
        .poses()
        .iter()
        .enumerate()
        .map(|(t, p)| FrameRecord {
            time_step: t,
            observation: vec![],
            pose: PoseRecord::from_pose(&human, p),
            action: vec![],
            task_reward: 0.0,
        })
        .collect();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    write_frames(&input, &frames).unwrap();
    let out = stabshape(
        dir.path(),
        &[
            "stabilize",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
            "--set",
            "stabilizer.reconstructor=identity",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_frames(&output).unwrap(), frames);

    let mut text = std::fs::read_to_string(&input).unwrap();
    text.push_str("{\"time_step\": 99}\n");
    std::fs::write(&input, text).unwrap();
    let out = stabshape(dir.path(), &["stabilize", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 21"), "{}", stderr(&out));
}

#[test]
fn offline_tools_reproduce_training_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "pipeline");
    let episode = run.join("episodes/episode_0000.jsonl");
    let human = dir.path().join("human.jsonl");
    let stable = dir.path().join("stable.jsonl");
    let out = stabshape(
        dir.path(),
        &["retarget", "--input", episode.to_str().unwrap(), "--output", human.to_str().unwrap(), "--mapping", "pendulum3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let config = run.join("config.toml");
    let out = stabshape(
        dir.path(),
        &[
            "stabilize",
            "--input",
            human.to_str().unwrap(),
            "--output",
            stable.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let offline = csv_column(&dir.path().join("stable.jsonl.diagnostics.csv"), "stabilizing_reward");
    let logged = csv_column(&run.join("rewards.csv"), "stabilizing_reward");
    assert!(!offline.is_empty());
    assert_eq!(offline, logged[..offline.len()].to_vec());
}
