//! The full training loop: rollout, replay storage, per-agent updates
//! (value, both Q heads, actor), one deferred signal update, then the
//! Polyak target update — in exactly that order every step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::{
    actor_loss_and_grad, compute_q_targets, compute_value_targets, q_loss_and_grad,
    value_loss_and_grad, ActMode, ActorBatch, Agent,
};
use crate::embedding::{EmbeddingConfig, PoolingMode, UserState};
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::{online_eval, OnlineReport};
use crate::model::ModelConfig;
use crate::nn::gaussian::{log_prob_reparam_batch, sample_batch, split_raw_batch};
use crate::replay::{ReplayBuffer, Transition};
use crate::signal::{signal_loss_and_grad, SignalBatch, SignalNet};

/// Training hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Signal entropy coefficient (0 = the no-entropy ablation).
    pub alpha: f64,
    /// Actor entropy coefficient.
    pub beta: f64,
    /// Polyak weight of the target value update.
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Signal vector length per agent.
    pub d_sig: usize,
    /// Hidden widths of policy/critic/value/signal trunks.
    pub hidden: Vec<usize>,
    /// Embedding widths.
    pub static_dim: usize,
    pub seq_dim: usize,
    pub attention_hidden: Vec<usize>,
    /// Environment steps before updates begin (one update per env step
    /// afterwards).
    pub warmup: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Clip each component's gradient to this global norm before the
    /// optimizer step (None disables clipping).
    pub grad_clip: Option<f64>,
    /// Remove the signal network entirely; actors receive zero vectors.
    pub no_signal: bool,
    /// Replace attention pooling with flat concatenation.
    pub no_attention: bool,
}

impl Default for TrainerConfig {
    /// Reported-scale defaults (replay 1e6, batch 256, 64-dim signals).
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.01,
            beta: 1.0,
            delta: 0.01,
            learning_rate: 0.01,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            d_sig: 64,
            hidden: vec![64, 64],
            static_dim: 8,
            seq_dim: 8,
            attention_hidden: vec![32, 32],
            warmup: 1000,
            total_steps: 50_000,
            eval_every: 1000,
            eval_episodes: 16,
            seed: 0,
            grad_clip: Some(10.0),
            no_signal: false,
            no_attention: false,
        }
    }
}

impl TrainerConfig {
    /// Desk-scale preset: small batch and signal so a 50k-step run fits
    /// in minutes on one core.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            d_sig: 8,
            hidden: vec![32, 32],
            beta: 0.05,
            eval_every: 2500,
            eval_episodes: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0,1)".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config("delta must lie in (0,1]".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("batch and buffer sizes must be positive".into()));
        }
        if self.d_sig == 0 {
            return Err(Error::Config("d_sig must be positive".into()));
        }
        Ok(())
    }

    /// The network shapes induced by this config over an environment.
    pub fn model_config(&self, env: &EnvConfig) -> ModelConfig {
        ModelConfig {
            n_agents: env.n_modules,
            d_item: env.d_item,
            d_sig: self.d_sig,
            hidden: self.hidden.clone(),
            embedding: EmbeddingConfig {
                static_cardinalities: env.static_cardinalities.clone(),
                static_dim: self.static_dim,
                item_cardinality: env.catalog_size + 1,
                seller_cardinality: env.n_sellers + 1,
                category_cardinality: env.n_categories + 1,
                seq_dim: self.seq_dim,
                history_len: env.k_history,
                attention_hidden: self.attention_hidden.clone(),
                mode: if self.no_attention {
                    PoolingMode::Concat
                } else {
                    PoolingMode::Attention
                },
            },
            use_signal: !self.no_signal,
        }
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub loss_v: Vec<f64>,
    pub loss_q1: Vec<f64>,
    pub loss_q2: Vec<f64>,
    pub loss_pi: Vec<f64>,
    pub loss_signal: Option<f64>,
    pub signal_entropy: Vec<f64>,
}

/// Agents, optional signal network, replay buffer, and the update loop.
pub struct Trainer {
    pub cfg: TrainerConfig,
    pub model: ModelConfig,
    pub agents: Vec<Agent>,
    pub signal: Option<SignalNet>,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    pub steps_done: usize,
    /// When set, every update appends its phase name (test hook for the
    /// update-order audit).
    pub trace: Option<Vec<String>>,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, env_cfg: &EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model_config(env_cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agents: Vec<Agent> = (0..model.n_agents)
            .map(|_| Agent::new(&model, cfg.learning_rate, &mut rng))
            .collect();
        let signal = if model.use_signal {
            Some(SignalNet::new(&model, cfg.learning_rate, &mut rng))
        } else {
            None
        };
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Ok(Self {
            cfg,
            model,
            agents,
            signal,
            buffer,
            rng,
            steps_done: 0,
            trace: None,
        })
    }

    fn trace(&mut self, label: String) {
        if let Some(t) = &mut self.trace {
            t.push(label);
        }
    }

    fn normal_matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut self.rng))
    }

    /// Signals for one rollout state: sampled when training, zeros under
    /// the no-signal ablation.
    pub fn rollout_signals(&mut self, state: &UserState, mode: ActMode) -> Result<Vec<Vec<f64>>> {
        match &self.signal {
            Some(sig) => match mode {
                ActMode::Deterministic => sig.sample(state, ActMode::Deterministic, None),
                ActMode::Stochastic => {
                    let eps: Vec<Vec<f64>> = (0..self.model.n_agents)
                        .map(|_| {
                            (0..self.cfg.d_sig)
                                .map(|_| StandardNormal.sample(&mut self.rng))
                                .collect()
                        })
                        .collect();
                    sig.sample(state, ActMode::Stochastic, Some(&eps))
                }
            },
            None => Ok(vec![vec![0.0; self.cfg.d_sig]; self.model.n_agents]),
        }
    }

    /// Stochastic rollout actions for one state.
    pub fn rollout_actions(&mut self, state: &UserState, phi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.model.d_item;
        let mut actions = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
            actions.push(agent.act(state, &phi[i], ActMode::Stochastic, Some(&eps))?);
        }
        Ok(actions)
    }

    /// One full update in the published order: per agent V, Q1, Q2, actor;
    /// then the signal network; then every agent's Polyak target update.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let b = self.cfg.batch_size;
        let n = self.model.n_agents;
        let d_item = self.model.d_item;
        let indices = self.buffer.sample_indices(b, &mut self.rng)?;

        let mut states = Vec::with_capacity(b);
        let mut next_states = Vec::with_capacity(b);
        let mut replay_joint = Array2::zeros((b, n * d_item));
        let mut rewards = Array2::zeros((b, n));
        for (row, &idx) in indices.iter().enumerate() {
            let t = self.buffer.get(idx);
            states.push(t.state.clone());
            next_states.push(t.next_state.clone());
            for i in 0..n {
                for j in 0..d_item {
                    replay_joint[(row, i * d_item + j)] = t.actions[i][j];
                }
                rewards[(row, i)] = t.rewards[i];
            }
        }

        // Sample signals and actions from the networks as of the start of
        // this step; these feed the value targets.
        let signal_fwd = match &self.signal {
            Some(sig) => {
                let mut rng = self.rng.clone();
                let fwd = sig.sample_states(&states, ActMode::Stochastic, &mut rng)?;
                self.rng = rng;
                Some(fwd)
            }
            None => None,
        };
        let phi: Vec<Array2<f64>> = match &signal_fwd {
            Some(f) => f.phi.clone(),
            None => (0..n).map(|_| Array2::zeros((b, self.cfg.d_sig))).collect(),
        };
        let signal_entropy = match (&self.signal, &signal_fwd) {
            (Some(sig), Some(fwd)) => sig.mean_entropies(fwd),
            _ => Vec::new(),
        };

        let mut sampled_joint = Array2::zeros((b, n * d_item));
        let mut log_pi_cur: Vec<Array1<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let eps = self.normal_matrix(b, d_item);
            let (raw, _) = self.agents[i].actor.forward(&states, Some(&phi[i]))?;
            let (mean, log_std, _) = split_raw_batch(&raw);
            let a = sample_batch(&mean, &log_std, &eps);
            log_pi_cur.push(log_prob_reparam_batch(&log_std, &eps));
            sampled_joint
                .slice_mut(ndarray::s![.., i * d_item..(i + 1) * d_item])
                .assign(&a);
        }

        let mut metrics = StepMetrics {
            loss_v: Vec::with_capacity(n),
            loss_q1: Vec::with_capacity(n),
            loss_q2: Vec::with_capacity(n),
            loss_pi: Vec::with_capacity(n),
            loss_signal: None,
            signal_entropy,
        };

        for i in 0..n {
            // Value update.
            self.trace(format!("agent{i}.value"));
            let targets = compute_value_targets(
                &self.agents[i],
                &states,
                &sampled_joint,
                &log_pi_cur[i],
                self.cfg.beta,
            )?;
            let (loss_v, mut grads) = value_loss_and_grad(&self.agents[i].value, &states, &targets)?;
            if let Some(c) = self.cfg.grad_clip {
                grads.clip_global_norm(c);
            }
            let grad_refs: Vec<(String, &[f64])> = grads.blocks();
            let agent = &mut self.agents[i];
            agent
                .opt_value
                .step(&mut crate::nn::ParamBlocks::blocks_mut(&mut agent.value), &grad_refs)?;
            metrics.loss_v.push(loss_v);

            // Q updates, both heads, on replay actions.
            self.trace(format!("agent{i}.q1"));
            let r_i = rewards.column(i).to_owned();
            let q_targets = compute_q_targets(
                &self.agents[i].target_value,
                &next_states,
                &r_i,
                self.cfg.gamma,
            )?;
            let (loss_q1, mut grads) =
                q_loss_and_grad(&self.agents[i].q1, &states, &replay_joint, &q_targets)?;
            if let Some(c) = self.cfg.grad_clip {
                grads.clip_global_norm(c);
            }
            let grad_refs: Vec<(String, &[f64])> = grads.blocks();
            let agent = &mut self.agents[i];
            agent
                .opt_q1
                .step(&mut crate::nn::ParamBlocks::blocks_mut(&mut agent.q1), &grad_refs)?;
            metrics.loss_q1.push(loss_q1);

            self.trace(format!("agent{i}.q2"));
            let (loss_q2, mut grads) =
                q_loss_and_grad(&self.agents[i].q2, &states, &replay_joint, &q_targets)?;
            if let Some(c) = self.cfg.grad_clip {
                grads.clip_global_norm(c);
            }
            let grad_refs: Vec<(String, &[f64])> = grads.blocks();
            let agent = &mut self.agents[i];
            agent
                .opt_q2
                .step(&mut crate::nn::ParamBlocks::blocks_mut(&mut agent.q2), &grad_refs)?;
            metrics.loss_q2.push(loss_q2);

            // Actor update: own action reparameterized, others from replay.
            self.trace(format!("agent{i}.actor"));
            let eps = self.normal_matrix(b, d_item);
            let batch = ActorBatch {
                states: &states,
                phi: &phi[i],
                replay_joint: &replay_joint,
                eps: &eps,
                agent_index: i,
                beta: self.cfg.beta,
            };
            let (loss_pi, mut grads) = actor_loss_and_grad(
                &self.agents[i].actor,
                &self.agents[i].q1,
                &self.agents[i].q2,
                &batch,
            )?;
            if let Some(c) = self.cfg.grad_clip {
                grads.clip_global_norm(c);
            }
            let grad_refs: Vec<(String, &[f64])> = grads.blocks();
            let agent = &mut self.agents[i];
            agent
                .opt_actor
                .step(&mut crate::nn::ParamBlocks::blocks_mut(&mut agent.actor), &grad_refs)?;
            metrics.loss_pi.push(loss_pi);
        }

        // One signal update after all agents.
        if self.signal.is_some() {
            self.trace("signal".into());
            let eps_phi: Vec<Array2<f64>> =
                (0..n).map(|_| self.normal_matrix(b, self.cfg.d_sig)).collect();
            let eps_a: Vec<Array2<f64>> = (0..n).map(|_| self.normal_matrix(b, d_item)).collect();
            let batch = SignalBatch {
                states: &states,
                replay_joint: &replay_joint,
                eps_phi: &eps_phi,
                eps_a: &eps_a,
                alpha: self.cfg.alpha,
            };
            let clip = self.cfg.grad_clip;
            let sig = self.signal.as_mut().unwrap();
            let (loss_sig, mut grads) = signal_loss_and_grad(&sig.net, &self.agents, &batch)?;
            if let Some(c) = clip {
                grads.clip_global_norm(c);
            }
            let grad_refs: Vec<(String, &[f64])> = grads.blocks();
            sig.opt
                .step(&mut crate::nn::ParamBlocks::blocks_mut(&mut sig.net), &grad_refs)?;
            metrics.loss_signal = Some(loss_sig);
        }

        // Target updates.
        for i in 0..n {
            self.trace(format!("agent{i}.target"));
            self.agents[i].polyak_update(self.cfg.delta);
        }

        self.steps_done += 1;
        Ok(metrics)
    }

    /// Collect one environment transition with sampled signals/actions.
    pub fn rollout_step(&mut self, env: &mut Env) -> Result<Vec<f64>> {
        let state = env.state().clone();
        let phi = self.rollout_signals(&state, ActMode::Stochastic)?;
        let actions = self.rollout_actions(&state, &phi)?;
        let out = env.step(&actions)?;
        let rewards = out.rewards.clone();
        self.buffer.push(Transition {
            state,
            actions,
            rewards: out.rewards,
            next_state: out.next_state,
        });
        if out.done {
            env.reset();
        }
        Ok(rewards)
    }
}

/// CSV column header for a given module count (the signal columns are
/// dropped under the no-signal ablation).
pub fn metrics_header(n: usize, with_signal: bool) -> String {
    let mut cols = vec!["step".to_string(), "reward_mean".to_string()];
    for i in 1..=n {
        cols.push(format!("reward_m{i}"));
    }
    for i in 1..=n {
        cols.push(format!("precision_m{i}"));
    }
    cols.push("precision_overall".into());
    for i in 1..=n {
        cols.push(format!("ndcg_m{i}"));
    }
    cols.push("ndcg_overall".into());
    for i in 1..=n {
        cols.push(format!("loss_v_{i}"));
        cols.push(format!("loss_q1_{i}"));
        cols.push(format!("loss_q2_{i}"));
        cols.push(format!("loss_pi_{i}"));
    }
    if with_signal {
        cols.push("loss_signal".into());
        for i in 1..=n {
            cols.push(format!("signal_entropy_{i}"));
        }
    }
    cols.join(",")
}

fn metrics_row(
    step: usize,
    report: &OnlineReport,
    losses: &StepMetrics,
    n: usize,
    with_signal: bool,
) -> String {
    let mut f = vec![step.to_string(), format!("{}", report.mean_episode_reward)];
    for i in 0..n {
        f.push(format!("{}", report.mean_reward_per_module[i]));
    }
    for i in 0..n {
        f.push(format!("{}", report.metrics.precision_per_module[i]));
    }
    f.push(format!("{}", report.metrics.overall_precision()));
    for i in 0..n {
        f.push(format!("{}", report.metrics.ndcg_per_module[i]));
    }
    f.push(format!("{}", report.metrics.overall_ndcg()));
    for i in 0..n {
        f.push(format!("{}", losses.loss_v[i]));
        f.push(format!("{}", losses.loss_q1[i]));
        f.push(format!("{}", losses.loss_q2[i]));
        f.push(format!("{}", losses.loss_pi[i]));
    }
    if with_signal {
        f.push(format!("{}", losses.loss_signal.unwrap_or(f64::NAN)));
        for i in 0..n {
            f.push(format!("{}", losses.signal_entropy[i]));
        }
    }
    f.join(",")
}

/// Artifacts of a finished (or aborted) training run.
pub struct RunSummary {
    pub steps: usize,
    pub final_eval: Option<OnlineReport>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Run the training loop: alternate environment rollouts and updates,
/// evaluate deterministically every `eval_every` steps, append metric
/// rows, and checkpoint. On divergence the last good checkpoint is kept
/// and the error returned.
pub fn run_training(
    trainer: &mut Trainer,
    env: &mut Env,
    out_dir: &Path,
    config_header: &str,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let checkpoint_path = out_dir.join("checkpoint.bin");
    let mut csv = BufWriter::new(File::create(&metrics_path)?);
    for line in config_header.lines() {
        writeln!(csv, "# {line}")?;
    }
    let n = trainer.model.n_agents;
    let with_signal = trainer.signal.is_some();
    writeln!(csv, "{}", metrics_header(n, with_signal))?;

    // Initial checkpoint, kept current after every evaluation.
    crate::checkpoint::save_policy(
        &checkpoint_path,
        &trainer.model,
        &trainer.agents,
        trainer.signal.as_ref(),
    )?;

    env.reset();
    let mut last_losses: Option<StepMetrics> = None;
    let mut final_eval = None;
    let eval_seed_base = trainer.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(17);

    for step in 0..trainer.cfg.total_steps {
        trainer.rollout_step(env)?;
        let ready = trainer.buffer.len() >= trainer.cfg.batch_size.max(trainer.cfg.warmup);
        if ready {
            match trainer.train_step() {
                Ok(m) => last_losses = Some(m),
                Err(e @ Error::Divergence(_)) => {
                    log::error!("training diverged at step {step}: {e}");
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        let at_eval = (step + 1) % trainer.cfg.eval_every == 0
            || step + 1 == trainer.cfg.total_steps;
        if at_eval {
            if let Some(losses) = &last_losses {
                let mut eval_env = env.clone();
                eval_env.reseed(eval_seed_base.wrapping_add((step as u64) << 8));
                let report = online_eval(
                    &trainer.agents,
                    trainer.signal.as_ref(),
                    &mut eval_env,
                    trainer.cfg.eval_episodes,
                )?;
                writeln!(csv, "{}", metrics_row(step + 1, &report, losses, n, with_signal))?;
                csv.flush()?;
                log::info!(
                    "step {}: eval reward {:.3}, precision {:.3}",
                    step + 1,
                    report.mean_episode_reward,
                    report.metrics.overall_precision()
                );
                crate::checkpoint::save_policy(
                    &checkpoint_path,
                    &trainer.model,
                    &trainer.agents,
                    trainer.signal.as_ref(),
                )?;
                final_eval = Some(report);
            }
        }
    }
    csv.flush()?;
    crate::checkpoint::save_policy(
        &checkpoint_path,
        &trainer.model,
        &trainer.agents,
        trainer.signal.as_ref(),
    )?;
    Ok(RunSummary {
        steps: trainer.cfg.total_steps,
        final_eval,
        metrics_path,
        checkpoint_path,
    })
}
