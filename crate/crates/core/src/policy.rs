//! Latent world model, sampling planner and temporal-difference updates.
//!
//! The model has five learned parts, each a small [`Mlp`]:
//! encoder `z = E(s)`, latent dynamics `z' = D(z, a)`, reward head
//! `r = R(z, a)`, two value heads `Q_k(z, a)` and a policy prior `P(z)`.
//! Actions live in `[-1, 1]^A`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    /// Polyak rate for the target encoder and value heads.
    pub tau: f64,
    pub consistency_coef: f64,
    pub reward_coef: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub grad_clip: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden_dim: 64,
            lr: 3e-4,
            tau: 0.005,
            consistency_coef: 2.0,
            reward_coef: 0.5,
            value_coef: 0.1,
            entropy_coef: 1e-4,
            log_std_min: -5.0,
            log_std_max: 1.0,
            grad_clip: 20.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("planner.model.{m}")));
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("latent_dim and hidden_dim must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        for (name, v) in [
            ("consistency_coef", self.consistency_coef),
            ("reward_coef", self.reward_coef),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("planner.model.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub discount: f64,
    /// Floor on the sampling standard deviation.
    pub min_std: f64,
    /// Standard deviation the sampling distribution starts from.
    pub max_std: f64,
    /// Fraction of the population drawn by rolling out the policy prior.
    pub prior_fraction: f64,
    pub model: ModelConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            population: 256,
            elites: 32,
            iterations: 4,
            discount: 0.99,
            min_std: 0.05,
            max_std: 2.0,
            prior_fraction: 0.05,
            model: ModelConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("planner.{m}")));
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.population == 0 || self.iterations == 0 {
            return bad("population and iterations must be >= 1");
        }
        if self.elites == 0 || self.elites > self.population {
            return bad("elites must be in 1..=population");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.min_std >= 0.0 && self.min_std <= self.max_std) {
            return bad("min_std must be in [0, max_std]");
        }
        if !(0.0..=1.0).contains(&self.prior_fraction) {
            return bad("prior_fraction must be in [0, 1]");
        }
        self.model.validate()
    }
}

/// What the planner needs from a model. Implemented by [`WorldModel`] and by
/// analytic models in tests.
pub trait PlanningModel {
    fn action_dim(&self) -> usize;
    fn encode(&self, state: &[f64]) -> Vec<f64>;
    fn next_latent(&self, z: &[f64], a: &[f64]) -> Vec<f64>;
    fn reward(&self, z: &[f64], a: &[f64]) -> f64;
    /// Minimum over the value heads.
    fn value(&self, z: &[f64], a: &[f64]) -> f64;
    fn prior_mean(&self, z: &[f64]) -> Vec<f64>;
    fn prior_sample(&self, z: &[f64], rng: &mut dyn rand::RngCore) -> Vec<f64>;

    /// [`rollout_score`] of every sequence.
    fn score_batch(&self, z0: &[f64], seqs: &[Vec<Vec<f64>>], gamma: f64) -> Vec<f64> {
        seqs.iter().map(|s| score_one(self, z0, s, gamma)).collect()
    }
}

/// `sum_t gamma^t R(z_t, a_t) + gamma^H min_k Q_k(z_H, P_mean(z_H))`.
pub fn rollout_score(model: &dyn PlanningModel, z0: &[f64], actions: &[Vec<f64>], gamma: f64) -> f64 {
    score_one(model, z0, actions, gamma)
}

fn score_one<M: PlanningModel + ?Sized>(model: &M, z0: &[f64], actions: &[Vec<f64>], gamma: f64) -> f64 {
    let mut z = z0.to_vec();
    let mut total = 0.0;
    let mut discount = 1.0;
    for a in actions {
        total += discount * model.reward(&z, a);
        z = model.next_latent(&z, a);
        discount *= gamma;
    }
    let tail = model.prior_mean(&z);
    total + discount * model.value(&z, &tail)
}

/// Sampling distribution kept between planner calls.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanSolution {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl PlanSolution {
    /// The solution advanced by one step; the vacated last step is zero.
    pub fn shifted(&self) -> Vec<Vec<f64>> {
        let mut m: Vec<Vec<f64>> = self.mean.iter().skip(1).cloned().collect();
        m.push(vec![0.0; self.mean[0].len()]);
        m
    }

    pub fn first_action(&self) -> &[f64] {
        &self.mean[0]
    }
}

/// Cross-entropy planning from `state`. Returns the final sampling
/// distribution; its first mean action is the action to take.
pub fn plan(
    model: &dyn PlanningModel,
    state: &[f64],
    config: &PlannerConfig,
    previous: Option<&PlanSolution>,
    rng: &mut dyn rand::RngCore,
) -> PlanSolution {
    let h = config.horizon;
    let adim = model.action_dim();
    let z0 = model.encode(state);
    let mut mean = match previous {
        Some(p) if p.mean.len() == h => p.shifted(),
        _ => vec![vec![0.0; adim]; h],
    };
    let mut std = vec![vec![config.max_std; adim]; h];
    let n_prior = ((config.population as f64 * config.prior_fraction).round() as usize).min(config.population);
    let mut prior_seqs = Vec::with_capacity(n_prior);
    for _ in 0..n_prior {
        let mut z = z0.clone();
        let mut seq = Vec::with_capacity(h);
        for _ in 0..h {
            let a = clamp_action(model.prior_sample(&z, rng));
            z = model.next_latent(&z, &a);
            seq.push(a);
        }
        prior_seqs.push(seq);
    }
    for _ in 0..config.iterations {
        let mut seqs: Vec<Vec<Vec<f64>>> = prior_seqs.clone();
        while seqs.len() < config.population {
            let seq: Vec<Vec<f64>> = (0..h)
                .map(|t| {
                    (0..adim)
                        .map(|k| {
                            let e: f64 = StandardNormal.sample(rng);
                            (mean[t][k] + std[t][k] * e).clamp(-1.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            seqs.push(seq);
        }
        let scores = model.score_batch(&z0, &seqs, config.discount);
        let mut candidates: Vec<(f64, Vec<Vec<f64>>)> = scores.into_iter().zip(seqs).collect();
        candidates.sort_by(|a, b| nan_low(b.0).total_cmp(&nan_low(a.0)));
        let elites = &candidates[..config.elites];
        let n = elites.len() as f64;
        for t in 0..h {
            for k in 0..adim {
                let mu = elites.iter().map(|(_, s)| s[t][k]).sum::<f64>() / n;
                let var = elites.iter().map(|(_, s)| (s[t][k] - mu).powi(2)).sum::<f64>() / n;
                mean[t][k] = mu;
                std[t][k] = var.sqrt().clamp(config.min_std, config.max_std.max(config.min_std));
            }
        }
    }
    PlanSolution { mean, std }
}

fn nan_low(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

fn clamp_action(mut a: Vec<f64>) -> Vec<f64> {
    a.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
    a
}

/// A batch of transitions `(s, a, r, s', done)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
    pub grad_norm: f64,
}

/// Weights of the three model loss terms; tests isolate one term at a time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
}

/// Gradients of a loss with respect to each network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<f64>,
    pub dynamics: Vec<f64>,
    pub reward: Vec<f64>,
    pub q: [Vec<f64>; 2],
}

#[derive(Clone, Debug)]
struct Optimizers {
    encoder: Adam,
    dynamics: Adam,
    reward: Adam,
    q: [Adam; 2],
    policy: Adam,
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    config: ModelConfig,
    discount: f64,
    state_dim: usize,
    action_dim: usize,
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub reward_head: Mlp,
    pub q_heads: [Mlp; 2],
    pub policy_head: Mlp,
    pub target_encoder: Mlp,
    pub target_q: [Mlp; 2],
    /// Running magnitude of value estimates; divides the policy objective.
    pub q_scale: f64,
    opt: Optimizers,
}

impl WorldModel {
    pub fn new(state_dim: usize, action_dim: usize, planner: &PlannerConfig, seed: u64) -> Result<Self> {
        planner.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Structural("state and action dimensions must be positive".into()));
        }
        let c = &planner.model;
        let (d, hd) = (c.latent_dim, c.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::new(&[state_dim, hd, hd, d], 1.0, &mut rng);
        let dynamics = Mlp::new(&[d + action_dim, hd, hd, d], 1.0, &mut rng);
        let reward_head = Mlp::new(&[d + action_dim, hd, hd, 1], 0.1, &mut rng);
        let q_heads = [
            Mlp::new(&[d + action_dim, hd, hd, 1], 0.1, &mut rng),
            Mlp::new(&[d + action_dim, hd, hd, 1], 0.1, &mut rng),
        ];
        let policy_head = Mlp::new(&[d, hd, hd, 2 * action_dim], 0.1, &mut rng);
        let opt = Optimizers {
            encoder: Adam::new(encoder.param_count(), c.lr),
            dynamics: Adam::new(dynamics.param_count(), c.lr),
            reward: Adam::new(reward_head.param_count(), c.lr),
            q: [Adam::new(q_heads[0].param_count(), c.lr), Adam::new(q_heads[1].param_count(), c.lr)],
            policy: Adam::new(policy_head.param_count(), c.lr),
        };
        Ok(Self {
            config: c.clone(),
            discount: planner.discount,
            state_dim,
            action_dim,
            target_encoder: encoder.clone(),
            target_q: q_heads.clone(),
            encoder,
            dynamics,
            reward_head,
            q_heads,
            policy_head,
            q_scale: 1.0,
            opt,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Value heads predict `Q / value_scale`, keeping their outputs near the
    /// per-step reward scale: `1 / (1 - discount)`, at most 1000.
    pub fn value_scale(&self) -> f64 {
        (1.0 / (1.0 - self.discount)).min(1000.0)
    }

    /// `z = E(s)`, checking the state dimension.
    pub fn encode_checked(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::Structural(format!(
                "state has {} entries, the encoder expects {}",
                state.len(),
                self.state_dim
            )));
        }
        Ok(self.encoder.forward(state))
    }

    /// Policy prior outputs: raw mean and the squashed log standard deviation.
    pub fn prior(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.policy_head.forward(z);
        let a = self.action_dim;
        let mu = out[..a].to_vec();
        let log_std = out[a..].iter().map(|&x| self.squash_log_std(x)).collect();
        (mu, log_std)
    }

    fn squash_log_std(&self, x: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        lo + 0.5 * (hi - lo) * (x.tanh() + 1.0)
    }

    /// Every parameter of every network is finite.
    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|(_, n)| n.params().iter().all(|x| x.is_finite())) && self.q_scale.is_finite()
    }

    fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        vec![
            ("encoder", &self.encoder),
            ("dynamics", &self.dynamics),
            ("reward", &self.reward_head),
            ("q1", &self.q_heads[0]),
            ("q2", &self.q_heads[1]),
            ("policy", &self.policy_head),
            ("target_encoder", &self.target_encoder),
            ("target_q1", &self.target_q[0]),
            ("target_q2", &self.target_q[1]),
        ]
    }

    fn networks_mut(&mut self) -> Vec<(&'static str, &mut Mlp)> {
        let [q1, q2] = &mut self.q_heads;
        let [t1, t2] = &mut self.target_q;
        vec![
            ("encoder", &mut self.encoder),
            ("dynamics", &mut self.dynamics),
            ("reward", &mut self.reward_head),
            ("q1", q1),
            ("q2", q2),
            ("policy", &mut self.policy_head),
            ("target_encoder", &mut self.target_encoder),
            ("target_q1", t1),
            ("target_q2", t2),
        ]
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let n = batch.len();
        if batch.actions.len() != n || batch.rewards.len() != n || batch.next_states.len() != n || batch.dones.len() != n
        {
            return Err(Error::Structural("batch columns differ in length".into()));
        }
        for i in 0..n {
            if batch.states[i].len() != self.state_dim
                || batch.next_states[i].len() != self.state_dim
                || batch.actions[i].len() != self.action_dim
            {
                return Err(Error::Structural(format!("batch row {i} has wrong dimensions")));
            }
        }
        Ok(())
    }

    /// `y = r + gamma (1 - done) min_k Q'_k(E(s'), P_mean(E(s')))`, no gradient.
    pub fn value_targets(&self, batch: &Batch) -> Vec<f64> {
        let n = batch.len();
        let zn = self.encoder.forward_batch(&flatten(&batch.next_states), n);
        let an = self.prior_mean_batch(&zn, n);
        let za = concat_rows(&zn, self.config.latent_dim, &an, self.action_dim);
        let q1 = self.target_q[0].forward_batch(&za, n);
        let q2 = self.target_q[1].forward_batch(&za, n);
        let scale = self.value_scale();
        (0..n)
            .map(|i| {
                if batch.dones[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + self.discount * scale * q1[i].min(q2[i])
                }
            })
            .collect()
    }

    fn prior_mean_batch(&self, z: &[f64], n: usize) -> Vec<f64> {
        let out = self.policy_head.forward_batch(z, n);
        let a = self.action_dim;
        out.chunks_exact(2 * a).flat_map(|row| row[..a].iter().map(|x| x.tanh())).collect()
    }

    /// Weighted sum of the consistency, reward and value losses and its
    /// gradient. `targets` are the value targets (held constant); the value
    /// loss is measured in units of [`WorldModel::value_scale`].
    pub fn model_loss_and_grad(&self, batch: &Batch, targets: &[f64], w: LossWeights) -> (LossStats, ModelGrads) {
        let n = batch.len();
        let nf = n as f64;
        let d = self.config.latent_dim;
        let adim = self.action_dim;
        let mut grads = ModelGrads {
            encoder: vec![0.0; self.encoder.param_count()],
            dynamics: vec![0.0; self.dynamics.param_count()],
            reward: vec![0.0; self.reward_head.param_count()],
            q: [vec![0.0; self.q_heads[0].param_count()], vec![0.0; self.q_heads[1].param_count()]],
        };
        let mut stats = LossStats::default();
        let te = self.encoder.forward_batch_trace(&flatten(&batch.states), n);
        let za = concat_rows(te.output(), d, &flatten(&batch.actions), adim);
        let target_z = self.target_encoder.forward_batch(&flatten(&batch.next_states), n);
        let mut dz = vec![0.0; n * d];

        let td = self.dynamics.forward_batch_trace(&za, n);
        let g: Vec<f64> = td
            .output()
            .iter()
            .zip(&target_z)
            .map(|(p, t)| {
                let e = p - t;
                stats.consistency += e * e / nf;
                w.consistency * 2.0 * e / nf
            })
            .collect();
        let gin = self.dynamics.backward_batch(&td, &g, &mut grads.dynamics);
        add_latent_part(&mut dz, d, &gin, d + adim);

        let tr = self.reward_head.forward_batch_trace(&za, n);
        let g: Vec<f64> = tr
            .output()
            .iter()
            .zip(&batch.rewards)
            .map(|(p, r)| {
                let e = p - r;
                stats.reward += e * e / nf;
                w.reward * 2.0 * e / nf
            })
            .collect();
        let gin = self.reward_head.backward_batch(&tr, &g, &mut grads.reward);
        add_latent_part(&mut dz, d, &gin, d + adim);

        let scale = self.value_scale();
        for k in 0..2 {
            let tq = self.q_heads[k].forward_batch_trace(&za, n);
            let g: Vec<f64> = tq
                .output()
                .iter()
                .zip(targets)
                .map(|(p, y)| {
                    let e = p - y / scale;
                    stats.value += e * e / nf;
                    w.value * 2.0 * e / nf
                })
                .collect();
            let gin = self.q_heads[k].backward_batch(&tq, &g, &mut grads.q[k]);
            add_latent_part(&mut dz, d, &gin, d + adim);
        }
        self.encoder.backward_batch(&te, &dz, &mut grads.encoder);
        (stats, grads)
    }

    /// Policy objective `mean_b[-min_k Q_k(z, a)/q_scale - alpha sum log_std]`
    /// with `a = tanh(mu + exp(log_std) * eps)` and `z = E(s)` held constant.
    /// Returns the loss and its gradient with respect to the policy head.
    pub fn policy_loss_and_grad(&self, states: &[Vec<f64>], eps: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let n = states.len();
        let nf = n as f64;
        let adim = self.action_dim;
        let d = self.config.latent_dim;
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let alpha = self.config.entropy_coef;
        let mut grad = vec![0.0; self.policy_head.param_count()];
        let mut loss = 0.0;
        let z = self.encoder.forward_batch(&flatten(states), n);
        let tp = self.policy_head.forward_batch_trace(&z, n);
        let out = tp.output();
        let mut a = vec![0.0; n * adim];
        let mut sigma = vec![0.0; n * adim];
        for i in 0..n {
            for k in 0..adim {
                let o = &out[i * 2 * adim..(i + 1) * 2 * adim];
                let log_std = lo + 0.5 * (hi - lo) * (o[adim + k].tanh() + 1.0);
                sigma[i * adim + k] = log_std.exp();
                a[i * adim + k] = (o[k] + sigma[i * adim + k] * eps[i][k]).tanh();
                loss -= alpha * log_std / nf;
            }
        }
        let za = concat_rows(&z, d, &a, adim);
        let t1 = self.q_heads[0].forward_batch_trace(&za, n);
        let t2 = self.q_heads[1].forward_batch_trace(&za, n);
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        let scale = self.value_scale();
        for i in 0..n {
            let (q1, q2) = (t1.output()[i], t2.output()[i]);
            let q = scale * q1.min(q2);
            loss -= q / self.q_scale / nf;
            if q1 <= q2 {
                g1[i] = -scale / self.q_scale / nf;
            } else {
                g2[i] = -scale / self.q_scale / nf;
            }
        }
        let mut scratch = vec![0.0; self.q_heads[0].param_count()];
        let gza1 = self.q_heads[0].backward_batch(&t1, &g1, &mut scratch);
        let mut scratch = vec![0.0; self.q_heads[1].param_count()];
        let gza2 = self.q_heads[1].backward_batch(&t2, &g2, &mut scratch);
        let w = d + adim;
        let mut gout = vec![0.0; n * 2 * adim];
        for i in 0..n {
            let o = &out[i * 2 * adim..(i + 1) * 2 * adim];
            for k in 0..adim {
                let ak = a[i * adim + k];
                let ga = gza1[i * w + d + k] + gza2[i * w + d + k];
                let du = ga * (1.0 - ak * ak);
                gout[i * 2 * adim + k] = du;
                let t = o[adim + k].tanh();
                let dlog_std_dx = 0.5 * (hi - lo) * (1.0 - t * t);
                gout[i * 2 * adim + adim + k] = (du * sigma[i * adim + k] * eps[i][k] - alpha / nf) * dlog_std_dx;
            }
        }
        self.policy_head.backward_batch(&tp, &gout, &mut grad);
        (loss, grad)
    }

    /// Scores many action sequences from one latent state at once; equal to
    /// [`rollout_score`] per sequence up to rounding.
    pub fn score_sequences(&self, z0: &[f64], seqs: &[Vec<Vec<f64>>], gamma: f64) -> Vec<f64> {
        let n = seqs.len();
        if n == 0 {
            return Vec::new();
        }
        let (d, adim) = (self.config.latent_dim, self.action_dim);
        let h = seqs[0].len();
        let mut z: Vec<f64> = (0..n).flat_map(|_| z0.iter().copied()).collect();
        let mut total = vec![0.0; n];
        let mut discount = 1.0;
        for t in 0..h {
            let a: Vec<f64> = seqs.iter().flat_map(|s| s[t].iter().copied()).collect();
            let za = concat_rows(&z, d, &a, adim);
            let r = self.reward_head.forward_batch(&za, n);
            z = self.dynamics.forward_batch(&za, n);
            for (tot, r) in total.iter_mut().zip(&r) {
                *tot += discount * r;
            }
            discount *= gamma;
        }
        let tail = self.prior_mean_batch(&z, n);
        let za = concat_rows(&z, d, &tail, adim);
        let q1 = self.q_heads[0].forward_batch(&za, n);
        let q2 = self.q_heads[1].forward_batch(&za, n);
        let scale = self.value_scale();
        for i in 0..n {
            total[i] += discount * scale * q1[i].min(q2[i]);
        }
        total
    }

    /// One gradient step on all losses, then the target update.
    ///
    /// A non-finite loss rejects the step and leaves the model untouched.
    pub fn td_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<LossStats> {
        self.check_batch(batch)?;
        let targets = self.value_targets(batch);
        let weights = LossWeights {
            consistency: self.config.consistency_coef,
            reward: self.config.reward_coef,
            value: self.config.value_coef,
        };
        let (mut stats, mut grads) = self.model_loss_and_grad(batch, &targets, weights);
        let eps: Vec<Vec<f64>> = (0..batch.len())
            .map(|_| (0..self.action_dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let (policy_loss, mut policy_grad) = self.policy_loss_and_grad(&batch.states, &eps);
        stats.policy = policy_loss;
        let finite = [stats.consistency, stats.reward, stats.value, stats.policy]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::TrainingFault(format!(
                "non-finite loss (consistency {}, reward {}, value {}, policy {}); step rejected",
                stats.consistency, stats.reward, stats.value, stats.policy
            )));
        }
        let clip = self.config.grad_clip;
        let [gq1, gq2] = &mut grads.q;
        let mut all = [&mut grads.encoder, &mut grads.dynamics, &mut grads.reward, gq1, gq2];
        let norm2: f64 = all.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            return Err(Error::TrainingFault("non-finite gradient; step rejected".into()));
        }
        if norm > clip {
            let s = clip / norm;
            for g in all.iter_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        clip_grad_norm(&mut policy_grad, clip);
        stats.grad_norm = norm;

        self.opt.encoder.step(self.encoder.params_mut(), &grads.encoder);
        self.opt.dynamics.step(self.dynamics.params_mut(), &grads.dynamics);
        self.opt.reward.step(self.reward_head.params_mut(), &grads.reward);
        for k in 0..2 {
            self.opt.q[k].step(self.q_heads[k].params_mut(), &grads.q[k]);
        }
        self.opt.policy.step(self.policy_head.params_mut(), &policy_grad);
        self.polyak(self.config.tau);

        let mean_abs_q = targets.iter().map(|y| y.abs()).sum::<f64>() / targets.len() as f64;
        self.q_scale = 0.99 * self.q_scale + 0.01 * mean_abs_q.max(1.0);
        Ok(stats)
    }

    /// `target <- (1 - tau) target + tau online` for the encoder and value heads.
    pub fn polyak(&mut self, tau: f64) {
        blend(self.target_encoder.params_mut(), self.encoder.params(), tau);
        for k in 0..2 {
            blend(self.target_q[k].params_mut(), self.q_heads[k].params(), tau);
        }
    }

    /// Writes a checkpoint tagged with `config_hash`.
    pub fn save(&self, path: &Path, config_hash: &str, step: u64) -> Result<()> {
        let text = self.to_checkpoint_string(config_hash, step)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_string(&self, config_hash: &str, step: u64) -> Result<String> {
        if !self.is_finite() {
            return Err(Error::TrainingFault("refusing to checkpoint non-finite parameters".into()));
        }
        let mut arrays: Vec<NamedArray> = self
            .networks()
            .into_iter()
            .map(|(name, net)| NamedArray {
                name: name.to_string(),
                shape: net.sizes().to_vec(),
                data: net.params().to_vec(),
            })
            .collect();
        arrays.push(NamedArray {
            name: "q_scale".into(),
            shape: vec![1],
            data: vec![self.q_scale],
        });
        arrays.push(NamedArray {
            name: "meta".into(),
            shape: vec![4],
            data: vec![self.state_dim as f64, self.action_dim as f64, self.discount, self.config.tau],
        });
        let body = CheckpointBody {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: config_hash.into(),
            step,
            arrays,
        };
        let body_text = serde_json::to_string(&body)?;
        let checksum = hex::encode(Sha256::digest(body_text.as_bytes()));
        Ok(serde_json::to_string(&CheckpointFile { body, checksum })?)
    }

    /// Reads a checkpoint into a model built from `planner`. Returns the
    /// stored config hash and step.
    pub fn load(path: &Path, planner: &PlannerConfig) -> Result<(Self, String, u64)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, planner)
    }

    pub fn from_checkpoint_str(text: &str, planner: &PlannerConfig) -> Result<(Self, String, u64)> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
        let body_text = serde_json::to_string(&file.body)?;
        let checksum = hex::encode(Sha256::digest(body_text.as_bytes()));
        if checksum != file.checksum {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let body = file.body;
        if body.format != CHECKPOINT_FORMAT {
            return Err(Error::Integrity(format!("unknown checkpoint format '{}'", body.format)));
        }
        let find = |name: &str| {
            body.arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks array '{name}'")))
        };
        let meta = find("meta")?;
        if meta.data.len() != 4 {
            return Err(Error::Integrity("malformed meta array".into()));
        }
        let mut model = Self::new(meta.data[0] as usize, meta.data[1] as usize, planner, 0)
            .map_err(|e| Error::Integrity(format!("checkpoint does not fit the config: {e}")))?;
        for (name, net) in model.networks_mut() {
            let arr = find(name)?;
            if arr.shape != net.sizes() || arr.data.len() != net.param_count() {
                return Err(Error::Integrity(format!(
                    "array '{name}' has shape {:?}, the config implies {:?}",
                    arr.shape,
                    net.sizes()
                )));
            }
            net.params_mut().copy_from_slice(&arr.data);
        }
        model.q_scale = find("q_scale")?.data.first().copied().unwrap_or(1.0);
        model.discount = meta.data[2];
        Ok((model, body.config_hash, body.step))
    }
}

pub const CHECKPOINT_FORMAT: &str = "stabshape-checkpoint/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointBody {
    format: String,
    config_hash: String,
    step: u64,
    arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    body: CheckpointBody,
    checksum: String,
}

fn blend(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Row-wise `[a_i, b_i]` of two row-major batches.
fn concat_rows(a: &[f64], wa: usize, b: &[f64], wb: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(wa).zip(b.chunks_exact(wb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

/// Adds the first `d` columns of each `width`-wide row of `g` to `acc`.
fn add_latent_part(acc: &mut [f64], d: usize, g: &[f64], width: usize) {
    for (a, row) in acc.chunks_exact_mut(d).zip(g.chunks_exact(width)) {
        for (x, y) in a.iter_mut().zip(row) {
            *x += y;
        }
    }
}

impl PlanningModel for WorldModel {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn score_batch(&self, z0: &[f64], seqs: &[Vec<Vec<f64>>], gamma: f64) -> Vec<f64> {
        self.score_sequences(z0, seqs, gamma)
    }

    fn encode(&self, state: &[f64]) -> Vec<f64> {
        self.encoder.forward(state)
    }

    fn next_latent(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        self.dynamics.forward(&concat(z, a))
    }

    fn reward(&self, z: &[f64], a: &[f64]) -> f64 {
        self.reward_head.forward(&concat(z, a))[0]
    }

    fn value(&self, z: &[f64], a: &[f64]) -> f64 {
        let za = concat(z, a);
        self.value_scale() * self.q_heads[0].forward(&za)[0].min(self.q_heads[1].forward(&za)[0])
    }

    fn prior_mean(&self, z: &[f64]) -> Vec<f64> {
        let out = self.policy_head.forward(z);
        out[..self.action_dim].iter().map(|x| x.tanh()).collect()
    }

    fn prior_sample(&self, z: &[f64], rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let (mu, log_std) = self.prior(z);
        mu.iter()
            .zip(&log_std)
            .map(|(m, l)| {
                let e: f64 = StandardNormal.sample(rng);
                (m + l.exp() * e).tanh()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PlannerConfig {
        PlannerConfig {
            population: 16,
            elites: 4,
            iterations: 2,
            model: ModelConfig {
                latent_dim: 4,
                hidden_dim: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_encoder_gives_zero_latent() {
        let mut m = WorldModel::new(3, 2, &small(), 1).unwrap();
        m.encoder.params_mut().iter_mut().for_each(|x| *x = 0.0);
        assert_eq!(m.encode_checked(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert!(m.encode_checked(&[1.0]).is_err());
    }

    #[test]
    fn polyak_full_rate_copies() {
        let mut m = WorldModel::new(3, 2, &small(), 1).unwrap();
        m.encoder.params_mut()[0] += 1.0;
        m.q_heads[1].params_mut()[3] -= 2.0;
        m.polyak(1.0);
        assert_eq!(m.target_encoder.params(), m.encoder.params());
        assert_eq!(m.target_q[1].params(), m.q_heads[1].params());
    }

    #[test]
    fn gamma_zero_scores_first_reward() {
        let m = WorldModel::new(3, 2, &small(), 4).unwrap();
        let z = m.encode(&[0.1, 0.2, 0.3]);
        let seq = vec![vec![0.5, -0.5], vec![0.1, 0.1]];
        assert_eq!(rollout_score(&m, &z, &seq, 0.0), m.reward(&z, &seq[0]));
    }

    #[test]
    fn planner_is_seeded_and_bounded() {
        let m = WorldModel::new(3, 2, &small(), 4).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            plan(&m, &[0.1, 0.2, 0.3], &small(), None, &mut rng)
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.mean.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
    }

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
        let mut v = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        Batch {
            states: (0..n).map(|_| v(3)).collect(),
            actions: (0..n).map(|_| v(2)).collect(),
            rewards: v(n),
            next_states: (0..n).map(|_| v(3)).collect(),
            dones: (0..n).map(|i| i % 3 == 0).collect(),
        }
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = WorldModel::new(3, 2, &small(), 2).unwrap();
        let batch = toy_batch(&mut rng, 5);
        let targets = m.value_targets(&batch);
        let w = LossWeights { consistency: 1.3, reward: 0.7, value: 0.4 };
        let total = |m: &WorldModel| {
            let (s, _) = m.model_loss_and_grad(&batch, &targets, w);
            w.consistency * s.consistency + w.reward * s.reward + w.value * s.value
        };
        let (_, g) = m.model_loss_and_grad(&batch, &targets, w);
        let h = 1e-6;
        for i in (0..m.encoder.param_count()).step_by(7) {
            let mut p = m.clone();
            p.encoder.params_mut()[i] += h;
            let mut q = m.clone();
            q.encoder.params_mut()[i] -= h;
            let fd = (total(&p) - total(&q)) / (2.0 * h);
            assert!((fd - g.encoder[i]).abs() < 1e-6, "encoder {i}: {fd} vs {}", g.encoder[i]);
        }
        let eps: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0), 0.3]).collect();
        let (_, gp) = m.policy_loss_and_grad(&batch.states, &eps);
        for i in (0..m.policy_head.param_count()).step_by(5) {
            let mut p = m.clone();
            p.policy_head.params_mut()[i] += h;
            let mut q = m.clone();
            q.policy_head.params_mut()[i] -= h;
            let fd = (p.policy_loss_and_grad(&batch.states, &eps).0 - q.policy_loss_and_grad(&batch.states, &eps).0) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6, "policy {i}: {fd} vs {}", gp[i]);
        }
    }

    #[test]
    fn batched_scores_match_single_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = WorldModel::new(3, 2, &small(), 4).unwrap();
        let z = m.encode(&[0.1, -0.2, 0.3]);
        let seqs: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let batch = m.score_batch(&z, &seqs, 0.9);
        for (s, b) in seqs.iter().zip(&batch) {
            assert!((rollout_score(&m, &z, s, 0.9) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut m = WorldModel::new(3, 2, &small(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.td_update(&Batch::default(), &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_reward_rejects_step() {
        let mut m = WorldModel::new(2, 1, &small(), 1).unwrap();
        let before = m.encoder.params().to_vec();
        let batch = Batch {
            states: vec![vec![0.0, 1.0]],
            actions: vec![vec![0.2]],
            rewards: vec![f64::NAN],
            next_states: vec![vec![0.1, 0.9]],
            dones: vec![false],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.td_update(&batch, &mut rng), Err(Error::TrainingFault(_))));
        assert_eq!(m.encoder.params(), &before[..]);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let m = WorldModel::new(3, 2, &small(), 7).unwrap();
        let a = m.to_checkpoint_string("abc", 12).unwrap();
        let (back, hash, step) = WorldModel::from_checkpoint_str(&a, &small()).unwrap();
        assert_eq!((hash.as_str(), step), ("abc", 12));
        assert_eq!(back.to_checkpoint_string("abc", 12).unwrap(), a);
        let corrupted = a.replacen("0.", "1.", 1);
        assert!(matches!(
            WorldModel::from_checkpoint_str(&corrupted, &small()),
            Err(Error::Integrity(_))
        ));
    }
}
