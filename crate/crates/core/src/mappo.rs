//! Multi-agent PPO with a shared actor and a centralized critic.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, MergingEnv, ObservationMatrix, TrafficMode};
use crate::error::{Error, Result};
use crate::metrics::{average_speed, collision_rate, EpisodeRecord};
use crate::nn::{log_softmax, Adam, AdamConfig, Mlp};
use crate::rng::{self, derive_seed, tags};
use crate::vehicle::HighLevelAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Environment decision steps collected per update.
    pub rollout_steps: usize,
    pub hidden: Vec<usize>,
    /// Training episodes between evaluations.
    pub eval_interval_episodes: usize,
    pub eval_episodes: usize,
    /// Learn from the shield-corrected action instead of the proposal.
    pub store_corrected_action: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            seeds: vec![0, 1000, 2024],
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            optimizer: AdamConfig::default(),
            epochs: 10,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            rollout_steps: 1024,
            hidden: vec![128, 128],
            eval_interval_episodes: 200,
            eval_episodes: 3,
            store_corrected_action: false,
        }
    }
}

/// Generalized advantage estimates of one agent's sequence. `last_value`
/// bootstraps the step after the sequence and is ignored when the last step
/// is terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(Error::LengthMismatch(format!(
            "gae: {} rewards, {} values, {} done flags",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    Ok(adv)
}

fn clip_terms(new: f64, old: f64, adv: f64, eps: f64) -> (f64, f64, f64) {
    let ratio = (new - old).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    (ratio, unclipped, clipped)
}

/// Negated clipped surrogate objective, averaged over the batch.
pub fn clip_loss(new_logp: &[f64], old_logp: &[f64], advantages: &[f64], eps: f64) -> f64 {
    let n = new_logp.len() as f64;
    -new_logp
        .iter()
        .zip(old_logp)
        .zip(advantages)
        .map(|((&a, &b), &adv)| {
            let (_, u, c) = clip_terms(a, b, adv, eps);
            u.min(c)
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`clip_loss`] with respect to the new log-probabilities.
pub fn clip_loss_grad(
    new_logp: &[f64],
    old_logp: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Vec<f64> {
    let n = new_logp.len() as f64;
    new_logp
        .iter()
        .zip(old_logp)
        .zip(advantages)
        .map(|((&a, &b), &adv)| {
            let (ratio, u, c) = clip_terms(a, b, adv, eps);
            if u <= c {
                -ratio * adv / n
            } else {
                0.0
            }
        })
        .collect()
}

pub fn value_loss(values: &[f64], returns: &[f64]) -> f64 {
    let n = values.len() as f64;
    values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r).powi(2))
        .sum::<f64>()
        / n
}

pub fn value_loss_grad(values: &[f64], returns: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    values
        .iter()
        .zip(returns)
        .map(|(v, r)| 2.0 * (v - r) / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub obs_len: usize,
    pub critic_len: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
}

impl Architecture {
    pub fn for_env(env: &EnvConfig, hidden: &[usize]) -> Self {
        Self {
            obs_len: env.observation_len(),
            critic_len: env.critic_input_len(),
            hidden: hidden.to_vec(),
            actions: HighLevelAction::COUNT,
        }
    }
}

/// Shared actor and centralized critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let sizes = |input: usize, out: usize| {
            std::iter::once(input)
                .chain(arch.hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };
        Self {
            actor: Mlp::new(&sizes(arch.obs_len, arch.actions), 0.01, rng),
            critic: Mlp::new(&sizes(arch.critic_len, 1), 1.0, rng),
        }
    }

    pub fn architecture(&self) -> Architecture {
        let a = self.actor.sizes();
        Architecture {
            obs_len: a[0],
            critic_len: self.critic.input_len(),
            hidden: a[1..a.len() - 1].to_vec(),
            actions: *a.last().unwrap_or(&0),
        }
    }

    /// Action log-probabilities, one row per observation.
    pub fn log_probs(&self, obs: &Array2<f64>) -> Array2<f64> {
        log_softmax(&self.actor.forward(obs.view()))
    }

    pub fn values(&self, critic_inputs: &Array2<f64>) -> Vec<f64> {
        self.critic.forward(critic_inputs.view()).column(0).to_vec()
    }
}

fn stack(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), width));
    for (mut dst, src) in a.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(*src));
    }
    a
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(logp: ndarray::ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub critic_input: Vec<f64>,
    pub action: usize,
    pub logp: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub samples: Vec<Sample>,
    /// Environment decision steps in this rollout.
    pub steps: usize,
    pub episodes_finished: usize,
}

fn finish_sequence(
    seq: &mut Vec<Sample>,
    last_value: f64,
    gamma: f64,
    lambda: f64,
    out: &mut Vec<Sample>,
) -> Result<()> {
    let rewards: Vec<f64> = seq.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = seq.iter().map(|s| s.value).collect();
    let dones: Vec<bool> = seq.iter().map(|s| s.done).collect();
    let adv = gae(&rewards, &values, &dones, last_value, gamma, lambda)?;
    for (mut s, a) in seq.drain(..).zip(adv) {
        s.advantage = a;
        s.ret = a + s.value;
        out.push(s);
    }
    Ok(())
}

/// Steps a training environment across rollouts, keeping unfinished agent
/// sequences between calls.
pub struct RolloutCollector {
    env: MergingEnv,
    mode: TrafficMode,
    seed: u64,
    episode_index: u64,
    observations: Vec<ObservationMatrix>,
    pending: Vec<Vec<Sample>>,
    pub total_steps: usize,
    pub episodes: usize,
}

impl RolloutCollector {
    pub fn new(env_config: EnvConfig, mode: TrafficMode, seed: u64) -> Result<Self> {
        let env = MergingEnv::new(env_config)?;
        let mut c = Self {
            env,
            mode,
            seed,
            episode_index: 0,
            observations: Vec::new(),
            pending: Vec::new(),
            total_steps: 0,
            episodes: 0,
        };
        c.start_episode();
        Ok(c)
    }

    fn start_episode(&mut self) {
        loop {
            let s = derive_seed(self.seed, &[tags::EPISODE, self.episode_index]);
            self.episode_index += 1;
            self.observations = self.env.reset(self.mode, s);
            if !self.env.is_done() {
                break;
            }
        }
        self.pending = vec![Vec::new(); self.env.agents().len()];
    }

    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        model: &ActorCritic,
        n_steps: usize,
        cfg: &TrainConfig,
        rng: &mut R,
        greedy: bool,
    ) -> Result<RolloutBuffer> {
        let mut buffer = RolloutBuffer::default();
        let max_agents = self.env.config().max_agents;
        let obs_len = self.env.config().observation_len();
        for _ in 0..n_steps {
            let alive: Vec<usize> = (0..self.env.agents().len())
                .filter(|&i| self.env.alive()[i])
                .collect();
            let obs_rows: Vec<&[f64]> = alive
                .iter()
                .map(|&i| self.observations[i].data.as_slice())
                .collect();
            let logp = model.log_probs(&stack(&obs_rows, obs_len));
            let critic_inputs: Vec<Vec<f64>> = alive
                .iter()
                .map(|&i| MergingEnv::critic_input(&self.observations, i, max_agents, obs_len))
                .collect();
            let crit_rows: Vec<&[f64]> = critic_inputs.iter().map(|v| v.as_slice()).collect();
            let values = model.values(&stack(&crit_rows, max_agents * obs_len));

            let mut actions = vec![HighLevelAction::Cruising; self.env.agents().len()];
            let mut chosen = vec![0usize; alive.len()];
            for (k, &slot) in alive.iter().enumerate() {
                let row = logp.row(k);
                chosen[k] = if greedy {
                    argmax(row)
                } else {
                    sample_index(row, rng)
                };
                actions[slot] =
                    HighLevelAction::from_index(chosen[k]).expect("index below action count");
            }
            let out = self.env.step(&actions)?;
            self.total_steps += 1;
            buffer.steps += 1;

            for (k, &slot) in alive.iter().enumerate() {
                let mut action = chosen[k];
                if cfg.store_corrected_action {
                    if let Some(exec) = out.executed[slot] {
                        action = exec.index();
                    }
                }
                self.pending[slot].push(Sample {
                    obs: self.observations[slot].data.clone(),
                    critic_input: critic_inputs[k].clone(),
                    action,
                    logp: logp[[k, action]],
                    value: values[k],
                    reward: out.rewards[slot],
                    done: out.agent_done[slot],
                    advantage: 0.0,
                    ret: 0.0,
                });
                if out.agent_done[slot] {
                    finish_sequence(
                        &mut self.pending[slot],
                        0.0,
                        cfg.gamma,
                        cfg.lambda,
                        &mut buffer.samples,
                    )?;
                }
            }
            self.observations = out.observations;
            if out.done {
                self.episodes += 1;
                buffer.episodes_finished += 1;
                self.start_episode();
            }
        }
        // bootstrap agents still driving
        let open: Vec<usize> = (0..self.pending.len())
            .filter(|&i| !self.pending[i].is_empty())
            .collect();
        if !open.is_empty() {
            let inputs: Vec<Vec<f64>> = open
                .iter()
                .map(|&i| MergingEnv::critic_input(&self.observations, i, max_agents, obs_len))
                .collect();
            let rows: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
            let boot = model.values(&stack(&rows, max_agents * obs_len));
            for (k, &slot) in open.iter().enumerate() {
                finish_sequence(
                    &mut self.pending[slot],
                    boot[k],
                    cfg.gamma,
                    cfg.lambda,
                    &mut buffer.samples,
                )?;
            }
        }
        Ok(buffer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Optimizer state for both networks.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(model: &ActorCritic, config: AdamConfig) -> Self {
        Self {
            actor: Adam::new(&model.actor, config),
            critic: Adam::new(&model.critic, config),
        }
    }
}

/// Losses and gradients of one minibatch, without applying them.
pub struct MinibatchLoss {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_grads: crate::nn::Gradients,
    pub critic_grads: crate::nn::Gradients,
}

pub fn minibatch_loss(
    model: &ActorCritic,
    batch: &[&Sample],
    advantages: &[f64],
    cfg: &TrainConfig,
) -> MinibatchLoss {
    let b = batch.len();
    let obs_rows: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
    let crit_rows: Vec<&[f64]> = batch.iter().map(|s| s.critic_input.as_slice()).collect();
    let obs = stack(&obs_rows, model.actor.input_len());
    let crit = stack(&crit_rows, model.critic.input_len());

    let (logits, actor_cache) = model.actor.forward_cached(obs.view());
    let logp = log_softmax(&logits);
    let probs = logp.mapv(f64::exp);
    let new_logp: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, s)| logp[[i, s.action]])
        .collect();
    let old_logp: Vec<f64> = batch.iter().map(|s| s.logp).collect();
    let policy_loss = clip_loss(&new_logp, &old_logp, advantages, cfg.clip_eps);
    let g_logp = clip_loss_grad(&new_logp, &old_logp, advantages, cfg.clip_eps);
    let entropies: Vec<f64> = (0..b)
        .map(|i| {
            -(0..probs.ncols())
                .map(|j| probs[[i, j]] * logp[[i, j]])
                .sum::<f64>()
        })
        .collect();
    let entropy = entropies.iter().sum::<f64>() / b as f64;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    for i in 0..b {
        for j in 0..probs.ncols() {
            let onehot = if j == batch[i].action { 1.0 } else { 0.0 };
            d_logits[[i, j]] = g_logp[i] * (onehot - probs[[i, j]])
                + cfg.entropy_coef / b as f64 * probs[[i, j]] * (logp[[i, j]] + entropies[i]);
        }
    }
    let clip_fraction = new_logp
        .iter()
        .zip(&old_logp)
        .filter(|(n, o)| ((*n - *o).exp() - 1.0).abs() > cfg.clip_eps)
        .count() as f64
        / b as f64;

    let (v_out, critic_cache) = model.critic.forward_cached(crit.view());
    let values = v_out.column(0).to_vec();
    let returns: Vec<f64> = batch.iter().map(|s| s.ret).collect();
    let v_loss = value_loss(&values, &returns);
    let dv: Vec<f64> = value_loss_grad(&values, &returns)
        .into_iter()
        .map(|g| g * cfg.value_coef)
        .collect();
    let d_values = Array2::from_shape_vec((b, 1), dv).expect("one value per sample");

    MinibatchLoss {
        policy_loss,
        value_loss: v_loss,
        entropy,
        clip_fraction,
        actor_grads: model.actor.backward(&actor_cache, d_logits),
        critic_grads: model.critic.backward(&critic_cache, d_values),
    }
}

/// Advantages of the buffer, normalized to zero mean and unit variance.
pub fn normalized_advantages(buffer: &RolloutBuffer) -> Vec<f64> {
    let a: Vec<f64> = buffer.samples.iter().map(|s| s.advantage).collect();
    let n = a.len().max(1) as f64;
    let mean = a.iter().sum::<f64>() / n;
    let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    a.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

pub fn update<R: Rng + ?Sized>(
    model: &mut ActorCritic,
    opt: &mut Optimizers,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.samples.len();
    let mut stats = UpdateStats::default();
    if n == 0 {
        return Ok(stats);
    }
    let adv = normalized_advantages(buffer);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &buffer.samples[i]).collect();
            let batch_adv: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let mut loss = minibatch_loss(model, &batch, &batch_adv, cfg);
            let total = loss.policy_loss + cfg.value_coef * loss.value_loss
                - cfg.entropy_coef * loss.entropy;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "policy {} value {} entropy {} over {} samples",
                    loss.policy_loss,
                    loss.value_loss,
                    loss.entropy,
                    batch.len()
                )));
            }
            loss.actor_grads.clip_norm(cfg.max_grad_norm);
            loss.critic_grads.clip_norm(cfg.max_grad_norm);
            opt.actor.step(&mut model.actor, &loss.actor_grads);
            opt.critic.step(&mut model.critic, &loss.critic_grads);
            stats.policy_loss += loss.policy_loss;
            stats.value_loss += loss.value_loss;
            stats.entropy += loss.entropy;
            stats.clip_fraction += loss.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.clip_fraction /= m;
    Ok(stats)
}

/// Greedy episodes with recording on.
pub fn run_episodes(
    model: &ActorCritic,
    env_config: &EnvConfig,
    mode: TrafficMode,
    seeds: &[u64],
) -> Result<Vec<EpisodeRecord>> {
    let mut env = MergingEnv::new(env_config.clone())?;
    env.set_recording(true);
    let obs_len = env_config.observation_len();
    let mut records = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut obs = env.reset(mode, seed);
        while !env.is_done() {
            let rows: Vec<&[f64]> = obs.iter().map(|o| o.data.as_slice()).collect();
            let logp = model.log_probs(&stack(&rows, obs_len));
            let actions: Vec<HighLevelAction> = logp
                .axis_iter(Axis(0))
                .map(|r| HighLevelAction::from_index(argmax(r)).expect("index below action count"))
                .collect();
            obs = env.step(&actions)?.observations;
        }
        if let Some(r) = env.take_record() {
            records.push(r);
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub avg_speed: f64,
    pub collision_rate: f64,
}

pub fn eval_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|i| derive_seed(seed, &[tags::EVAL, i]))
        .collect()
}

pub fn curve_point(records: &[EpisodeRecord], step: usize, episodes: usize) -> Result<CurvePoint> {
    Ok(CurvePoint {
        step,
        episodes,
        mean_reward: records.iter().map(|r| r.mean_return()).sum::<f64>()
            / records.len().max(1) as f64,
        avg_speed: average_speed(records)?,
        collision_rate: collision_rate(records)?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic,
    pub curve: Vec<CurvePoint>,
    pub steps: usize,
    pub episodes: usize,
    pub updates: Vec<UpdateStats>,
}

/// Full training run for one seed. `init` continues from existing weights
/// (curriculum); `on_eval` sees every curve point as it is produced.
pub fn train(
    cfg: &TrainConfig,
    env_config: &EnvConfig,
    mode: TrafficMode,
    seed: u64,
    init: Option<ActorCritic>,
    mut on_eval: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    let arch = Architecture::for_env(env_config, &cfg.hidden);
    let mut model = match init {
        Some(m) => {
            if m.architecture() != arch {
                return Err(Error::Checkpoint(format!(
                    "initial weights have architecture {:?}, config expects {:?}",
                    m.architecture(),
                    arch
                )));
            }
            m
        }
        None => ActorCritic::new(&arch, &mut rng::stream(seed, &[tags::INIT])),
    };
    let mut opt = Optimizers::new(&model, cfg.optimizer);
    let mut act_rng: ChaCha8Rng = rng::stream(seed, &[tags::ACTIONS]);
    let mut shuffle_rng: ChaCha8Rng = rng::stream(seed, &[tags::SHUFFLE]);
    let seeds = eval_seeds(seed, cfg.eval_episodes);
    let mut collector = RolloutCollector::new(env_config.clone(), mode, seed)?;
    let mut curve = Vec::new();
    let mut updates = Vec::new();

    let mut evaluate = |model: &ActorCritic,
                        steps: usize,
                        episodes: usize,
                        curve: &mut Vec<CurvePoint>|
     -> Result<()> {
        if cfg.eval_episodes == 0 {
            return Ok(());
        }
        let records = run_episodes(model, env_config, mode, &seeds)?;
        let p = curve_point(&records, steps, episodes)?;
        on_eval(&p);
        curve.push(p);
        Ok(())
    };
    evaluate(&model, 0, 0, &mut curve)?;
    let interval = cfg.eval_interval_episodes.max(1);
    let mut next_eval = interval;
    while collector.total_steps < cfg.total_steps {
        let n = cfg
            .rollout_steps
            .min(cfg.total_steps - collector.total_steps);
        let buffer = collector.collect(&model, n, cfg, &mut act_rng, false)?;
        updates.push(update(
            &mut model,
            &mut opt,
            &buffer,
            cfg,
            &mut shuffle_rng,
        )?);
        if collector.episodes >= next_eval {
            evaluate(
                &model,
                collector.total_steps,
                collector.episodes,
                &mut curve,
            )?;
            while next_eval <= collector.episodes {
                next_eval += interval;
            }
        }
    }
    if curve.last().is_none_or(|p| p.step != collector.total_steps) {
        evaluate(
            &model,
            collector.total_steps,
            collector.episodes,
            &mut curve,
        )?;
    }
    Ok(TrainOutcome {
        model,
        curve,
        steps: collector.total_steps,
        episodes: collector.episodes,
        updates,
    })
}

/// Saved weights with enough metadata to reject mismatched configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub architecture: Architecture,
    /// Traffic mode the weights were trained in.
    pub mode: TrafficMode,
    pub seed: u64,
    pub step: usize,
    pub config_hash: String,
    pub actor: Mlp,
    pub critic: Mlp,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

impl Checkpoint {
    pub fn new(
        model: &ActorCritic,
        mode: TrafficMode,
        seed: u64,
        step: usize,
        config_hash: String,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            architecture: model.architecture(),
            mode,
            seed,
            step,
            config_hash,
            actor: model.actor.clone(),
            critic: model.critic.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {}",
                ck.format
            )));
        }
        Ok(ck)
    }

    /// The stored model, provided it matches `expected`.
    pub fn into_model(self, expected: &Architecture) -> Result<ActorCritic> {
        let model = ActorCritic {
            actor: self.actor,
            critic: self.critic,
        };
        if &self.architecture != expected || &model.architecture() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} does not match {:?}",
                self.architecture, expected
            )));
        }
        Ok(model)
    }
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["step", "mean_reward", "avg_speed", "collision_rate"])?;
    for p in curve {
        w.write_record([
            p.step.to_string(),
            p.mean_reward.to_string(),
            p.avg_speed.to_string(),
            p.collision_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
