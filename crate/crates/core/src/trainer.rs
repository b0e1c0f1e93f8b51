//! Segment-staged training.
//!
//! Each iteration collects up to `l_s` environment steps, finalizes their
//! rewards through retargeting, reconstruction and scoring, stores the
//! finalized transitions and then runs `l_s` model updates on uniform samples
//! from the replay buffer.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{ActWith, RunConfig};
use crate::env::{make_env, EnvState, Environment, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{plan, Batch, LossStats, PlanSolution, PlannerConfig, PlanningModel, WorldModel};
use crate::retarget::{map_segment, MappingTable};
use crate::reward::{combine_rewards, pair_rewards, RewardParams};
use crate::skeleton::{Pose, TrajectorySegment};
use crate::stabilizer::{reconstruct_padded, MotionReconstructor};
use crate::traj::{write_frames, FrameRecord, PoseRecord};

/// One environment step before its reward is final.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub task_reward: f64,
    pub next_state: Vec<f64>,
    /// The episode terminated (not truncated) on this step.
    pub done: bool,
}

/// Steps collected since the last finalization, with the robot pose reached
/// by each step.
#[derive(Clone, Debug, Default)]
pub struct PendingSegment {
    pub transitions: Vec<RawTransition>,
    pub robot_poses: Vec<Pose>,
    /// Set when the segment ends its episode.
    pub episode_done: bool,
}

impl PendingSegment {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// A transition with its combined reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// The output of [`Finalizer::finalize`]; the only thing a [`ReplayBuffer`]
/// accepts.
#[derive(Clone, Debug)]
pub struct FinalizedSegment {
    transitions: Vec<Transition>,
    task: Vec<f64>,
    stabilizing: Vec<f64>,
}

impl FinalizedSegment {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn task_rewards(&self) -> &[f64] {
        &self.task
    }

    pub fn stabilizing_rewards(&self) -> &[f64] {
        &self.stabilizing
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Turns pending segments into finalized ones.
#[derive(Clone)]
pub struct Finalizer {
    pub mapping: Arc<MappingTable>,
    pub reconstructor: Arc<dyn MotionReconstructor>,
    pub params: RewardParams,
    /// Participating human joint indices.
    pub joints: Vec<usize>,
    /// Score every frame zero without retargeting or reconstructing.
    pub bypass: bool,
}

impl Finalizer {
    pub fn from_config(config: &RunConfig, spec: &TaskSpec) -> Result<Self> {
        let mapping = Arc::new(MappingTable::resolve(spec.mapping)?);
        let reconstructor = config
            .stabilizer
            .build(mapping.human().clone(), config.trainer.segment_length)?;
        let joints = config.reward.participating_indices(mapping.human())?;
        Ok(Self {
            mapping,
            reconstructor,
            params: config.reward.clone(),
            joints,
            bypass: config.trainer.bypass_stabilizer,
        })
    }

    /// Per-frame stabilizing rewards of a robot segment.
    pub fn stabilizing_rewards(&self, robot_poses: &[Pose]) -> Result<Vec<f64>> {
        if self.bypass {
            return Ok(vec![0.0; robot_poses.len()]);
        }
        let segment = TrajectorySegment::new(robot_poses.to_vec())?;
        let aligned = map_segment(&self.mapping, &segment)?;
        let stable = reconstruct_padded(self.reconstructor.as_ref(), &aligned)?;
        Ok(pair_rewards(self.mapping.human(), &aligned, &stable, &self.params, &self.joints)?.stabilizing)
    }

    pub fn finalize(&self, segment: PendingSegment) -> Result<FinalizedSegment> {
        if segment.is_empty() {
            return Err(Error::Contract("cannot finalize an empty segment".into()));
        }
        if segment.transitions.len() != segment.robot_poses.len() {
            return Err(Error::Contract(format!(
                "segment holds {} transitions but {} poses",
                segment.transitions.len(),
                segment.robot_poses.len()
            )));
        }
        let stabilizing = self.stabilizing_rewards(&segment.robot_poses)?;
        let mut task = Vec::with_capacity(segment.len());
        let transitions = segment
            .transitions
            .into_iter()
            .zip(&stabilizing)
            .map(|(t, &r_s)| {
                task.push(t.task_reward);
                Transition {
                    reward: combine_rewards(t.task_reward, r_s, &self.params),
                    state: t.state,
                    action: t.action,
                    next_state: t.next_state,
                    done: t.done,
                }
            })
            .collect();
        Ok(FinalizedSegment {
            transitions,
            task,
            stabilizing,
        })
    }
}

/// Runs `policy` from `start` for up to `l_s` steps, stopping early when the
/// episode ends. Returns the segment and the state to continue from, if any.
pub fn collect_segment(
    env: &mut dyn Environment,
    start: EnvState,
    l_s: usize,
    policy: &mut dyn FnMut(&EnvState) -> Result<Vec<f64>>,
) -> Result<(PendingSegment, Option<EnvState>)> {
    let mut seg = PendingSegment::default();
    let mut state = start;
    for _ in 0..l_s {
        let action = policy(&state)?;
        let out = env.step(&action)?;
        seg.transitions.push(RawTransition {
            state: std::mem::take(&mut state.observation),
            action,
            task_reward: out.reward,
            next_state: out.state.observation.clone(),
            done: out.terminated,
        });
        seg.robot_poses.push(out.state.robot_pose.clone());
        let done = out.done();
        state = out.state;
        if done {
            seg.episode_done = true;
            return Ok((seg, None));
        }
    }
    Ok((seg, Some(state)))
}

/// Fixed-capacity FIFO store of finalized transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
    inserted: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            data: Vec::new(),
            cursor: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Transitions inserted over the buffer's lifetime, evicted ones included.
    pub fn total_inserted(&self) -> usize {
        self.inserted
    }

    pub fn insert(&mut self, segment: FinalizedSegment) {
        for t in segment.transitions {
            if self.data.len() < self.capacity {
                self.data.push(t);
            } else {
                self.data[self.cursor] = t;
            }
            self.cursor = (self.cursor + 1) % self.capacity;
            self.inserted += 1;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Batch {
        assert!(!self.data.is_empty(), "sampling an empty buffer");
        let mut batch = Batch::default();
        for _ in 0..n {
            let t = &self.data[rng.random_range(0..self.data.len())];
            batch.states.push(t.state.clone());
            batch.actions.push(t.action.clone());
            batch.rewards.push(t.reward);
            batch.next_states.push(t.next_state.clone());
            batch.dones.push(t.done);
        }
        batch
    }
}

/// Trainer activity, recorded in order when [`Trainer::record_events`] is set.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Collected { segment: usize, len: usize, episode: usize },
    Finalized { segment: usize, len: usize },
    Dropped { segment: usize, len: usize },
    Inserted { segment: usize, len: usize, buffer_len: usize },
    /// One model update; `newest_segment` is the latest segment in the buffer.
    Update { newest_segment: usize, buffer_len: usize },
    WarmupSkip { buffer_len: usize },
}

/// Aggregated losses of one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IterationStats {
    pub updates: usize,
    pub rejected: usize,
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
}

/// `l_s` updates on independent uniform batches; skipped while the buffer
/// holds fewer than `batch_size` transitions.
pub fn train_iteration(
    model: &mut WorldModel,
    buffer: &ReplayBuffer,
    l_s: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Option<IterationStats> {
    if buffer.len() < batch_size {
        debug!("warm-up: buffer holds {} of {batch_size} transitions, no updates", buffer.len());
        return None;
    }
    let mut stats = IterationStats::default();
    for _ in 0..l_s {
        let batch = buffer.sample(batch_size, rng);
        stats.updates += 1;
        match model.td_update(&batch, rng) {
            Ok(s) => accumulate(&mut stats, &s),
            Err(e) => {
                warn!("{e}");
                stats.rejected += 1;
            }
        }
    }
    let n = (stats.updates - stats.rejected).max(1) as f64;
    stats.consistency /= n;
    stats.reward /= n;
    stats.value /= n;
    stats.policy /= n;
    Some(stats)
}

fn accumulate(acc: &mut IterationStats, s: &LossStats) {
    acc.consistency += s.consistency;
    acc.reward += s.reward;
    acc.value += s.value;
    acc.policy += s.policy;
}

/// Chooses an action for `obs`. `previous` carries the planner's solution
/// between calls and should be cleared at episode start.
pub fn select_action(
    model: &WorldModel,
    planner: &PlannerConfig,
    act_with: ActWith,
    obs: &[f64],
    previous: &mut Option<PlanSolution>,
    explore: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let z = model.encode_checked(obs)?;
    let (mean, std) = match act_with {
        ActWith::Plan => {
            let sol = plan(model, obs, planner, previous.as_ref(), rng);
            let out = (sol.mean[0].clone(), sol.std[0].clone());
            *previous = Some(sol);
            out
        }
        ActWith::Prior => {
            let (mu, log_std) = model.prior(&z);
            (
                mu.iter().map(|m| m.tanh()).collect(),
                log_std.iter().map(|l| l.exp()).collect(),
            )
        }
    };
    Ok(mean
        .iter()
        .zip(&std)
        .map(|(m, s)| {
            let e: f64 = if explore { StandardNormal.sample(rng) } else { 0.0 };
            (m + s * e).clamp(-1.0, 1.0)
        })
        .collect())
}

/// Unshaped task returns of `episodes` evaluation episodes.
///
/// Episode `k` resets with seed `seed + k` and plans with its own generator,
/// so results do not depend on any other run state.
pub fn evaluate(model: &WorldModel, config: &RunConfig, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = make_env(&config.task.name, config.reward.l_e)?;
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k) ^ 0x5eed_e7a1);
        let mut state = env.reset(seed.wrapping_add(k));
        let mut previous = None;
        let mut total = 0.0;
        loop {
            let a = select_action(
                model,
                &config.planner,
                config.trainer.act_with,
                &state.observation,
                &mut previous,
                false,
                &mut rng,
            )?;
            let out = env.step(&a)?;
            total += out.reward;
            if out.done() {
                break;
            }
            state = out.state;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// One row of `metrics.csv`, written at every evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub episode: usize,
    pub eval_return: f64,
    /// Mean task return of training episodes finished since the last row.
    pub train_return: Option<f64>,
    #[serde(rename = "mean_R_S")]
    pub mean_r_s: Option<f64>,
    pub mean_combined_reward: Option<f64>,
    pub frac_segments_rewarded: Option<f64>,
    pub wall_time_s: f64,
    pub updates: usize,
    pub consistency_loss: Option<f64>,
    pub reward_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub policy_loss: Option<f64>,
}

/// Per-step reward decomposition, as written to `rewards.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RewardRecord {
    pub step: usize,
    pub segment: usize,
    pub task_reward: f64,
    pub stabilizing_reward: f64,
    pub combined_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub env_steps: usize,
    pub episodes: usize,
    pub segments: usize,
    pub iterations: usize,
    pub updates: usize,
    pub finalized_transitions: usize,
    pub dropped_segments: usize,
    pub dropped_steps: usize,
    /// First evaluation step whose return reached the stop threshold.
    pub threshold_step: Option<usize>,
    pub final_eval_return: Option<f64>,
    /// The run stopped at `trainer.max_wall_time_s` before its step budget.
    pub timed_out: bool,
    pub wall_time_s: f64,
}

#[derive(Default)]
struct Window {
    r_s: f64,
    combined: f64,
    transitions: usize,
    segments: usize,
    rewarded_segments: usize,
    train_returns: Vec<f64>,
    losses: IterationStats,
    loss_iterations: usize,
}

impl Window {
    fn mean(sum: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| sum / n as f64)
    }
}

/// Files of a run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` with a `checkpoints/` subdirectory and the resolved config.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        let cfg = root.join("config.toml");
        fs::write(&cfg, config.to_toml_string()).map_err(|e| Error::io(&cfg, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Training state for one run.
pub struct Trainer {
    config: RunConfig,
    config_hash: String,
    spec: TaskSpec,
    env: Box<dyn Environment>,
    model: WorldModel,
    finalizer: Finalizer,
    buffer: ReplayBuffer,
    act_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    state: Option<EnvState>,
    previous_plan: Option<PlanSolution>,
    env_steps: usize,
    episodes: usize,
    episode_return: f64,
    episode_frames: Vec<FrameRecord>,
    segments: usize,
    iterations: usize,
    updates: usize,
    dropped_segments: usize,
    dropped_steps: usize,
    faults: Vec<String>,
    /// Record every [`Event`] in order.
    pub record_events: bool,
    events: Vec<Event>,
    reward_log: Vec<RewardRecord>,
    keep_reward_log: bool,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let spec = crate::env::task_spec(&config.task.name)?;
        let env = make_env(&config.task.name, config.reward.l_e)?;
        let seed = config.run.seed;
        let model = WorldModel::new(spec.observation_dim, spec.action_dim, &config.planner, seed)?;
        let finalizer = Finalizer::from_config(&config, &spec)?;
        Ok(Self {
            config_hash: config.hash(),
            buffer: ReplayBuffer::new(config.trainer.buffer_capacity),
            act_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            update_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0bda7e),
            keep_reward_log: config.run.log_rewards,
            config,
            spec,
            env,
            model,
            finalizer,
            state: None,
            previous_plan: None,
            env_steps: 0,
            episodes: 0,
            episode_return: 0.0,
            episode_frames: Vec::new(),
            segments: 0,
            iterations: 0,
            updates: 0,
            dropped_segments: 0,
            dropped_steps: 0,
            faults: Vec::new(),
            record_events: false,
            events: Vec::new(),
            reward_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn model(&self) -> &WorldModel {
        &self.model
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn finalizer(&self) -> &Finalizer {
        &self.finalizer
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn faults(&self) -> &[String] {
        &self.faults
    }

    /// Keep every [`RewardRecord`] in memory regardless of `run.log_rewards`.
    pub fn keep_reward_log(&mut self, keep: bool) {
        self.keep_reward_log = keep;
    }

    pub fn reward_log(&self) -> &[RewardRecord] {
        &self.reward_log
    }

    fn event(&mut self, e: Event) {
        if self.record_events {
            self.events.push(e);
        }
    }

    fn reset_seed(&self) -> u64 {
        self.config.run.seed.wrapping_mul(1_000_003).wrapping_add(self.episodes as u64)
    }

    /// Collects the next segment of at most `max_len` steps, resetting the
    /// environment first if the previous episode ended.
    pub fn collect(&mut self, max_len: usize) -> Result<PendingSegment> {
        let start = match self.state.take() {
            Some(s) => s,
            None => {
                self.previous_plan = None;
                self.episode_return = 0.0;
                self.env.reset(self.reset_seed())
            }
        };
        let seed_steps = self.config.trainer.seed_steps;
        let base = self.env_steps;
        let mut taken = 0;
        let (model, planner, act_with, explore) = (
            &self.model,
            &self.config.planner,
            self.config.trainer.act_with,
            self.config.trainer.explore,
        );
        let (rng, previous) = (&mut self.act_rng, &mut self.previous_plan);
        let mut policy = |s: &EnvState| -> Result<Vec<f64>> {
            let step = base + taken;
            taken += 1;
            if step < seed_steps {
                return Ok((0..model.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
            select_action(model, planner, act_with, &s.observation, previous, explore, rng)
        };
        let (seg, next) = collect_segment(self.env.as_mut(), start, max_len, &mut policy)?;
        self.env_steps += seg.len();
        self.episode_return += seg.transitions.iter().map(|t| t.task_reward).sum::<f64>();
        self.state = next;
        self.event(Event::Collected {
            segment: self.segments,
            len: seg.len(),
            episode: self.episodes,
        });
        Ok(seg)
    }

    /// Finalizes `seg` and inserts it; a failure drops the segment and is
    /// recorded as a fault.
    pub fn finalize_and_store(&mut self, seg: PendingSegment) -> Option<(f64, f64, bool)> {
        let id = self.segments;
        self.segments += 1;
        let len = seg.len();
        let first_step = self.env_steps - len;
        match self.finalizer.finalize(seg) {
            Ok(fin) => {
                self.event(Event::Finalized { segment: id, len });
                let r_s: f64 = fin.stabilizing.iter().sum();
                let combined: f64 = fin.transitions.iter().map(|t| t.reward).sum();
                let rewarded = fin.stabilizing.iter().any(|&r| r > 0.0);
                if self.keep_reward_log {
                    for (k, t) in fin.transitions.iter().enumerate() {
                        self.reward_log.push(RewardRecord {
                            step: first_step + k + 1,
                            segment: id,
                            task_reward: fin.task[k],
                            stabilizing_reward: fin.stabilizing[k],
                            combined_reward: t.reward,
                        });
                    }
                }
                self.buffer.insert(fin);
                self.event(Event::Inserted {
                    segment: id,
                    len,
                    buffer_len: self.buffer.len(),
                });
                Some((r_s, combined, rewarded))
            }
            Err(e) => {
                let msg = format!("segment {id} ({len} steps ending at step {}): dropped: {e}", self.env_steps);
                warn!("{msg}");
                self.faults.push(msg);
                self.dropped_segments += 1;
                self.dropped_steps += len;
                self.event(Event::Dropped { segment: id, len });
                None
            }
        }
    }

    /// One training iteration of `l_s` updates.
    pub fn train(&mut self) -> Option<IterationStats> {
        let l_s = self.config.trainer.segment_length;
        let batch = self.config.trainer.batch_size;
        let stats = train_iteration(&mut self.model, &self.buffer, l_s, batch, &mut self.update_rng);
        match &stats {
            Some(s) => {
                self.iterations += 1;
                self.updates += s.updates;
                if s.rejected > 0 {
                    self.faults.push(format!("{} updates rejected at step {}", s.rejected, self.env_steps));
                }
                if self.record_events {
                    let newest = self.segments - 1;
                    for _ in 0..s.updates {
                        self.events.push(Event::Update {
                            newest_segment: newest,
                            buffer_len: self.buffer.len(),
                        });
                    }
                }
            }
            None => self.event(Event::WarmupSkip {
                buffer_len: self.buffer.len(),
            }),
        }
        stats
    }

    /// Runs to `trainer.total_steps` (or the stop threshold), writing
    /// artifacts to `dir` if given.
    pub fn run(&mut self, dir: Option<&RunDir>) -> Result<(RunSummary, Vec<MetricsRow>)> {
        let started = Instant::now();
        let mut rows = Vec::new();
        let outcome = self.run_loop(dir, started, &mut rows);
        let summary = RunSummary {
            env_steps: self.env_steps,
            episodes: self.episodes,
            segments: self.segments,
            iterations: self.iterations,
            updates: self.updates,
            finalized_transitions: self.buffer.total_inserted(),
            dropped_segments: self.dropped_segments,
            dropped_steps: self.dropped_steps,
            threshold_step: outcome.as_ref().ok().and_then(|o| o.0),
            final_eval_return: rows.last().map(|r| r.eval_return),
            timed_out: outcome.as_ref().is_ok_and(|o| o.1),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = dir {
            let persisted = self.persist(dir, &rows, &summary);
            if let Err(e) = &outcome {
                self.append_fault(dir, &format!("run aborted: {e}"));
            }
            persisted?;
        }
        outcome?;
        Ok((summary, rows))
    }

    /// Returns the threshold step and whether the wall-clock limit ended the run.
    fn run_loop(&mut self, dir: Option<&RunDir>, started: Instant, rows: &mut Vec<MetricsRow>) -> Result<(Option<usize>, bool)> {
        let t = self.config.trainer.clone();
        let threshold = t.stop_at_fraction.map(|f| f * self.spec.max_episode_return());
        let mut window = Window::default();
        let mut next_checkpoint = if t.checkpoint_interval > 0 { t.checkpoint_interval } else { usize::MAX };
        let mut dumped = 0;
        while self.env_steps < t.total_steps {
            if t.max_wall_time_s.is_some_and(|limit| started.elapsed().as_secs_f64() >= limit) {
                info!("wall-clock limit reached at step {}", self.env_steps);
                return Ok((None, true));
            }
            let before = self.env_steps;
            let max_len = t.segment_length.min(t.total_steps - self.env_steps);
            let seg = self.collect(max_len)?;
            let episode_done = seg.episode_done;
            if dumped < self.config.run.dump_episodes {
                self.record_frames(&seg);
            }
            // evaluation points crossed while collecting; the model was fixed
            let mut eval_step = (before / t.eval_interval + 1) * t.eval_interval;
            let mut reached = None;
            let mut pending_evals = Vec::new();
            while eval_step <= self.env_steps {
                pending_evals.push(eval_step);
                eval_step += t.eval_interval;
            }
            let ended_return = self.episode_return;
            if episode_done {
                self.episodes += 1;
                window.train_returns.push(ended_return);
                if dumped < self.config.run.dump_episodes {
                    if let Some(dir) = dir {
                        let path = dir.path(&format!("episodes/episode_{dumped:04}.jsonl"));
                        fs::create_dir_all(dir.path("episodes")).map_err(|e| Error::io(dir.root(), e))?;
                        write_frames(&path, &self.episode_frames)?;
                    }
                    dumped += 1;
                }
                self.episode_frames.clear();
            }
            if let Some((r_s, combined, rewarded)) = self.finalize_and_store(seg.clone()) {
                window.r_s += r_s;
                window.combined += combined;
                window.transitions += seg.len();
                window.segments += 1;
                window.rewarded_segments += rewarded as usize;
            } else if let Some(dir) = dir {
                let last = self.faults.last().cloned().unwrap_or_default();
                self.append_fault(dir, &last);
            }
            for step in pending_evals {
                let eval_seed = self.config.run.seed.wrapping_mul(7_919).wrapping_add(step as u64);
                let returns = evaluate(&self.model, &self.config, t.eval_episodes, eval_seed)?;
                let eval_return = returns.iter().sum::<f64>() / returns.len() as f64;
                let row = self.metrics_row(step, eval_return, &window, started);
                info!(
                    "step {step}: eval return {eval_return:.1}, train return {}",
                    row.train_return.map_or("-".into(), |r| format!("{r:.1}"))
                );
                rows.push(row);
                window = Window::default();
                if reached.is_none() && threshold.is_some_and(|th| eval_return >= th) {
                    reached = Some(step);
                }
            }
            if let Some(stats) = self.train() {
                accumulate_stats(&mut window.losses, &stats);
                window.loss_iterations += 1;
            }
            if self.env_steps >= next_checkpoint {
                if let Some(dir) = dir {
                    self.save_checkpoint(dir, &format!("step_{:08}.json", self.env_steps))?;
                }
                while next_checkpoint <= self.env_steps {
                    next_checkpoint += t.checkpoint_interval;
                }
            }
            if !self.model.is_finite() {
                return Err(Error::TrainingFault("model parameters became non-finite".into()));
            }
            if reached.is_some() {
                info!("stop threshold reached at step {}", reached.unwrap());
                return Ok((reached, false));
            }
        }
        Ok((None, false))
    }

    fn record_frames(&mut self, seg: &PendingSegment) {
        let robot = self.env.robot().clone();
        let start_t = self.episode_frames.last().map_or(0, |f| f.time_step);
        for (k, (t, pose)) in seg.transitions.iter().zip(&seg.robot_poses).enumerate() {
            self.episode_frames.push(FrameRecord {
                time_step: start_t + k + 1,
                observation: t.next_state.clone(),
                pose: PoseRecord::from_pose(&robot, pose),
                action: t.action.clone(),
                task_reward: t.task_reward,
            });
        }
    }

    fn metrics_row(&self, step: usize, eval_return: f64, w: &Window, started: Instant) -> MetricsRow {
        let losses = |x: f64| Window::mean(x, w.loss_iterations);
        MetricsRow {
            step,
            episode: self.episodes,
            eval_return,
            train_return: Window::mean(w.train_returns.iter().sum(), w.train_returns.len()),
            mean_r_s: Window::mean(w.r_s, w.transitions),
            mean_combined_reward: Window::mean(w.combined, w.transitions),
            frac_segments_rewarded: Window::mean(w.rewarded_segments as f64, w.segments),
            wall_time_s: started.elapsed().as_secs_f64(),
            updates: self.updates,
            consistency_loss: losses(w.losses.consistency),
            reward_loss: losses(w.losses.reward),
            value_loss: losses(w.losses.value),
            policy_loss: losses(w.losses.policy),
        }
    }

    pub fn save_checkpoint(&self, dir: &RunDir, name: &str) -> Result<PathBuf> {
        let path = dir.path("checkpoints").join(name);
        self.model.save(&path, &self.config_hash, self.env_steps as u64)?;
        Ok(path)
    }

    fn append_fault(&self, dir: &RunDir, line: &str) {
        let path = dir.path("faults.log");
        let res = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = res {
            warn!("could not write {}: {e}", path.display());
        }
    }

    fn persist(&self, dir: &RunDir, rows: &[MetricsRow], summary: &RunSummary) -> Result<()> {
        write_csv(&dir.path("metrics.csv"), rows)?;
        if self.config.run.log_rewards {
            write_csv(&dir.path("rewards.csv"), &self.reward_log)?;
        }
        let faults = dir.path("faults.log");
        if !faults.exists() {
            File::create(&faults).map_err(|e| Error::io(&faults, e))?;
        }
        if self.model.is_finite() {
            self.save_checkpoint(dir, "final.json")?;
        }
        let path = dir.path("summary.json");
        fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(|e| Error::io(&path, e))
    }
}

fn accumulate_stats(acc: &mut IterationStats, s: &IterationStats) {
    acc.updates += s.updates;
    acc.rejected += s.rejected;
    acc.consistency += s.consistency;
    acc.reward += s.reward;
    acc.value += s.value;
    acc.policy += s.policy;
}

/// Writes `rows` as CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
