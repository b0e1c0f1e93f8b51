//! The `stabshape` command line.
//!
//! Exit codes: 0 success, 1 runtime fault, 2 usage or config error,
//! 3 artifact integrity error. Runs are written below `$STABSHAPE_OUTPUT_ROOT`
//! (default `runs`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::env::task_spec;
use crate::error::{Error, Result};
use crate::policy::WorldModel;
use crate::retarget::{map_robot_to_human, MappingTable};
use crate::reward::pair_rewards;
use crate::skeleton::{center_of_mass, forward_kinematics, SkeletonSpec, TrajectorySegment};
use crate::stabilizer::{reconstruct_padded, BalanceProjector, ReconstructorKind};
use crate::trainer::{evaluate, write_csv, RunDir, Trainer};
use crate::traj::{frames_to_poses, read_frames, segment_ranges, write_frames, FrameRecord, PoseRecord};

pub const OUTPUT_ROOT_VAR: &str = "STABSHAPE_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "stabshape", version, about = "Stability-shaped training and offline pose tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one run.
    Train {
        /// Bundled config name (stand, walk, pendulum) or a TOML file.
        #[arg(long)]
        config: String,
        /// `section.key=value` override, applied after parsing; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Replace an existing run directory of the same name.
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a checkpoint with unshaped task returns.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to `config.toml` of the checkpoint's run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stabilize a human-pose trajectory file.
    Stabilize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Run config supplying the stabilizer and segment length.
        #[arg(long, default_value = "stand")]
        config: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Diagnostics CSV; defaults to `<output>.diagnostics.csv`.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Map a robot trajectory file onto the human skeleton.
    Retarget {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Bundled mapping name or a mapping file.
        #[arg(long)]
        mapping: String,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Train every combination of lambda and seed and collect the curves.
    SweepLambda {
        #[arg(long)]
        config: String,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the resolved config and its hash.
    InspectConfig {
        #[arg(long)]
        config: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Structural(_) | Error::Input(_) | Error::Contract(_) => 2,
            Error::Integrity(_) => 3,
            Error::TrainingFault(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(e: Error) -> Failure {
    let mut f = Failure::from(e);
    if f.code == 1 {
        f.code = 2;
    }
    f
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Train { config, set, overwrite } => cmd_train(&config, &set, overwrite),
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
        } => cmd_eval(&checkpoint, config.as_deref(), episodes, seed),
        Command::Stabilize {
            input,
            output,
            config,
            set,
            diagnostics,
        } => cmd_stabilize(&input, &output, &config, &set, diagnostics),
        Command::Retarget {
            input,
            output,
            mapping,
            diagnostics,
        } => cmd_retarget(&input, &output, &mapping, diagnostics),
        Command::SweepLambda {
            config,
            lambdas,
            seeds,
            jobs,
            set,
        } => cmd_sweep_lambda(&config, &lambdas, &seeds, jobs, &set),
        Command::InspectConfig { config, set } => {
            let c = RunConfig::resolve(&config, &set).map_err(config_failure)?;
            println!("# config hash {}", c.hash());
            print!("{}", c.to_toml_string());
            Ok(())
        }
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn prepare_run_dir(root: &Path, config: &RunConfig, overwrite: bool) -> std::result::Result<RunDir, Failure> {
    if root.join("metrics.csv").exists() || root.join("config.toml").exists() {
        if !overwrite {
            return Err(Failure::usage(format!(
                "run directory {} already holds a run (pass --overwrite to replace it)",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Failure::from(Error::io(root, e)))?;
    }
    Ok(RunDir::create(root, config)?)
}

/// Trains `config` into `root`.
pub fn train_into(root: &Path, config: RunConfig, overwrite: bool) -> std::result::Result<crate::trainer::RunSummary, Failure> {
    let dir = prepare_run_dir(root, &config, overwrite)?;
    let mut trainer = Trainer::new(config)?;
    let (summary, _) = trainer.run(Some(&dir))?;
    Ok(summary)
}

fn cmd_train(config: &str, set: &[String], overwrite: bool) -> std::result::Result<(), Failure> {
    let config = RunConfig::resolve(config, set).map_err(config_failure)?;
    let root = output_root().join(&config.run.name);
    let summary = train_into(&root, config, overwrite)?;
    println!(
        "{}: {} steps, {} episodes, {} updates, final eval return {}",
        root.display(),
        summary.env_steps,
        summary.episodes,
        summary.updates,
        summary.final_eval_return.map_or("-".into(), |r| format!("{r:.3}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    episode: String,
    #[serde(rename = "return")]
    ret: f64,
}

fn cmd_eval(checkpoint: &Path, config: Option<&Path>, episodes: usize, seed: u64) -> std::result::Result<(), Failure> {
    if episodes == 0 {
        return Err(Failure::usage("--episodes must be >= 1"));
    }
    if !checkpoint.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let run_root = checkpoint
        .parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let config_path = config.map_or_else(|| run_root.join("config.toml"), Path::to_path_buf);
    let config = RunConfig::load(&config_path, &[]).map_err(config_failure)?;
    let (model, hash, step) = WorldModel::load(checkpoint, &config.planner)?;
    if hash != config.hash() {
        return Err(Error::Integrity(format!(
            "checkpoint was written under config hash {hash}, but {} hashes to {}; evaluate with the config the run used",
            config_path.display(),
            config.hash()
        ))
        .into());
    }
    let returns = evaluate(&model, &config, episodes, seed)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let mut rows: Vec<EvalRow> = returns
        .iter()
        .enumerate()
        .map(|(k, r)| {
            println!("episode {k}: return {r:.6}");
            EvalRow {
                episode: k.to_string(),
                ret: *r,
            }
        })
        .collect();
    println!("mean return over {episodes} episodes (checkpoint step {step}): {mean:.6}");
    rows.push(EvalRow {
        episode: "mean".into(),
        ret: mean,
    });
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let csv = run_root.join(format!("eval_{stem}_seed{seed}.csv"));
    write_csv(&csv, &rows)?;
    Ok(())
}

/// Per-frame output of `stabilize`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilizeDiagnostics {
    pub line: usize,
    pub time_step: usize,
    pub segment: usize,
    pub com_violation_distance: f64,
    pub correction_magnitude: f64,
    pub residual_violation: f64,
    pub similarity: f64,
    pub stabilizing_reward: f64,
}

/// Stabilizes human-pose frames segment by segment, as the trainer does.
pub fn stabilize_frames(
    frames: &[FrameRecord],
    config: &RunConfig,
) -> Result<(Vec<FrameRecord>, Vec<StabilizeDiagnostics>)> {
    let human = std::sync::Arc::new(SkeletonSpec::resolve("human")?);
    let max_len = config.trainer.segment_length;
    let reconstructor = config.stabilizer.build(human.clone(), max_len)?;
    let mut probe_cfg = config.stabilizer.clone();
    probe_cfg.reconstructor = ReconstructorKind::Reference;
    let probe = BalanceProjector::new(human.clone(), &probe_cfg, max_len)?;
    let joints = config.reward.participating_indices(&human)?;
    let poses = frames_to_poses(frames, &human)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut diags = Vec::with_capacity(frames.len());
    for (s, range) in segment_ranges(frames, max_len).into_iter().enumerate() {
        let aligned = TrajectorySegment::new(poses[range.clone()].to_vec())?;
        let stable = reconstruct_padded(reconstructor.as_ref(), &aligned)?;
        let scores = pair_rewards(&human, &aligned, &stable, &config.reward, &joints)?;
        for (k, (a, b)) in aligned.poses().iter().zip(stable.poses()).enumerate() {
            let i = range.start + k;
            let mut f = frames[i].clone();
            f.pose = PoseRecord::from_pose(&human, b);
            out.push(f);
            diags.push(StabilizeDiagnostics {
                line: i + 1,
                time_step: frames[i].time_step,
                segment: s,
                com_violation_distance: probe.com_violation(a),
                correction_magnitude: (b.root_translation - a.root_translation).xy().norm(),
                residual_violation: probe.com_violation(b),
                similarity: scores.similarity[k],
                stabilizing_reward: scores.stabilizing[k],
            });
        }
    }
    Ok((out, diags))
}

fn diagnostics_path(output: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".diagnostics.csv");
        output.with_file_name(name)
    })
}

fn cmd_stabilize(
    input: &Path,
    output: &Path,
    config: &str,
    set: &[String],
    diagnostics: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let config = RunConfig::resolve(config, set).map_err(config_failure)?;
    let frames = read_input(input)?;
    let (out, diags) = stabilize_frames(&frames, &config)?;
    write_frames(output, &out)?;
    write_csv(&diagnostics_path(output, diagnostics), &diags)?;
    let rewarded = diags.iter().filter(|d| d.stabilizing_reward > 0.0).count();
    println!(
        "stabilized {} frames in {} segments; {rewarded} frames earn the stabilizing reward",
        out.len(),
        diags.last().map_or(0, |d| d.segment + 1)
    );
    Ok(())
}

fn read_input(input: &Path) -> std::result::Result<Vec<FrameRecord>, Failure> {
    if !input.is_file() {
        return Err(Failure::usage(format!("input {} does not exist", input.display())));
    }
    Ok(read_frames(input)?)
}

/// Per-frame output of `retarget`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetargetDiagnostics {
    pub line: usize,
    pub time_step: usize,
    pub com_x: f64,
    pub com_y: f64,
    pub com_z: f64,
}

/// Maps robot frames to human frames with `mapping`.
pub fn retarget_frames(frames: &[FrameRecord], mapping: &MappingTable) -> Result<(Vec<FrameRecord>, Vec<RetargetDiagnostics>)> {
    let poses = frames_to_poses(frames, mapping.robot())?;
    let human = mapping.human();
    let mut out = Vec::with_capacity(frames.len());
    let mut diags = Vec::with_capacity(frames.len());
    for (i, (f, p)) in frames.iter().zip(&poses).enumerate() {
        let h = map_robot_to_human(mapping, p)?;
        let com = center_of_mass(human, &forward_kinematics(human, &h)?)?;
        let mut rec = f.clone();
        rec.pose = PoseRecord::from_pose(human, &h);
        out.push(rec);
        diags.push(RetargetDiagnostics {
            line: i + 1,
            time_step: f.time_step,
            com_x: com.x,
            com_y: com.y,
            com_z: com.z,
        });
    }
    Ok((out, diags))
}

fn cmd_retarget(input: &Path, output: &Path, mapping: &str, diagnostics: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let mapping = MappingTable::resolve(mapping).map_err(config_failure)?;
    if !mapping.is_valid() {
        return Err(Failure::usage(format!(
            "mapping is not valid: {}",
            crate::retarget::validate_mapping(&mapping)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    let frames = read_input(input)?;
    let (out, diags) = retarget_frames(&frames, &mapping)?;
    write_frames(output, &out)?;
    write_csv(&diagnostics_path(output, diagnostics), &diags)?;
    println!("retargeted {} frames from '{}' to '{}'", out.len(), mapping.robot().name(), mapping.human().name());
    Ok(())
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub step: usize,
    pub eval_return: f64,
}

/// Directory name of one sweep member.
pub fn sweep_member_name(lambda: f64, seed: u64) -> String {
    format!("lam{lambda}_seed{seed}")
}

/// Runs the sweep into `root`; failed members are reported and skipped.
/// Returns the combined rows and the failures.
pub fn sweep_into(
    root: &Path,
    base: &RunConfig,
    lambdas: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<(Vec<SweepRow>, Vec<String>)> {
    let mut members = Vec::new();
    for &lambda in lambdas {
        for &seed in seeds {
            let mut c = base.clone();
            c.reward.lambda = lambda;
            c.run.seed = seed;
            c.run.name = sweep_member_name(lambda, seed);
            c.validate()?;
            members.push(c);
        }
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let results: Mutex<Vec<Option<std::result::Result<Vec<SweepRow>, String>>>> =
        Mutex::new((0..members.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(members.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep queue");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(c) = members.get(i) else { break };
                let outcome = run_member(&root.join(&c.run.name), c.clone());
                results.lock().expect("sweep results")[i] = Some(outcome);
            });
        }
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in members.iter().zip(results.into_inner().expect("sweep results")) {
        match r.expect("every member ran") {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => failures.push(format!("{}: {e}", c.run.name)),
        }
    }
    write_csv(&root.join("sweep.csv"), &rows)?;
    if !failures.is_empty() {
        let path = root.join("faults.log");
        std::fs::write(&path, failures.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok((rows, failures))
}

fn run_member(dir: &Path, config: RunConfig) -> std::result::Result<Vec<SweepRow>, String> {
    let (lambda, seed) = (config.reward.lambda, config.run.seed);
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let run_dir = RunDir::create(dir, &config).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let (_, metrics) = trainer.run(Some(&run_dir)).map_err(|e| e.to_string())?;
    Ok(metrics
        .iter()
        .map(|m| SweepRow {
            lambda,
            seed,
            step: m.step,
            eval_return: m.eval_return,
        })
        .collect())
}

fn cmd_sweep_lambda(config: &str, lambdas: &[f64], seeds: &[u64], jobs: usize, set: &[String]) -> std::result::Result<(), Failure> {
    if lambdas.is_empty() {
        return Err(Failure::usage("--lambdas needs at least one value"));
    }
    if seeds.is_empty() {
        return Err(Failure::usage("--seeds needs at least one value"));
    }
    if jobs == 0 {
        return Err(Failure::usage("--jobs must be >= 1"));
    }
    let base = RunConfig::resolve(config, set).map_err(config_failure)?;
    task_spec(&base.task.name)?;
    let root = output_root().join(format!("{}-sweep", base.run.name));
    let (rows, failures) = sweep_into(&root, &base, lambdas, seeds, jobs)?;
    println!(
        "{}: {} runs, {} rows in sweep.csv, {} failed",
        root.display(),
        lambdas.len() * seeds.len(),
        rows.len(),
        failures.len()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("{} sweep runs failed:\n{}", failures.len(), failures.join("\n")),
        })
    }
}
