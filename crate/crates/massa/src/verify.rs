//! End-to-end gradient verification: builds tiny instances of every loss
//! and checks each analytic gradient against central finite differences.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::{
    actor_loss, actor_loss_and_grad, q_loss, q_loss_and_grad, value_loss, value_loss_and_grad,
    ActorBatch, Agent,
};
use crate::embedding::{EmbeddingConfig, HistoryRecord, PoolingMode, StateEmbedder, UserState};
use crate::error::Result;
use crate::model::ModelConfig;
use crate::nn::{check_gradients, GradCheckReport};
use crate::signal::{signal_loss, signal_loss_and_grad, SignalBatch, SignalNet};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

/// One verified loss group.
pub struct LossCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl LossCheck {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

/// The tiny verification instance: 2 agents, 4-dim items, 3-dim signals,
/// hidden width 8.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_agents: 2,
        d_item: 4,
        d_sig: 3,
        hidden: vec![8],
        embedding: EmbeddingConfig {
            static_cardinalities: vec![5, 4],
            static_dim: 3,
            item_cardinality: 12,
            seller_cardinality: 5,
            category_cardinality: 5,
            seq_dim: 3,
            history_len: 4,
            attention_hidden: vec![8, 8],
            mode: PoolingMode::Attention,
        },
        use_signal: true,
    }
}

fn random_states(n: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<UserState> {
    let e = &cfg.embedding;
    (0..n)
        .map(|_| UserState {
            static_ids: e
                .static_cardinalities
                .iter()
                .map(|&c| rng.random_range(1..c))
                .collect(),
            history: (0..e.history_len)
                .map(|k| {
                    if k + 1 == e.history_len {
                        HistoryRecord::PADDING
                    } else {
                        HistoryRecord {
                            item_id: rng.random_range(1..e.item_cardinality),
                            seller_id: rng.random_range(1..e.seller_cardinality),
                            category_id: rng.random_range(1..e.category_cardinality),
                        }
                    }
                })
                .collect(),
        })
        .collect()
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn to_owned_blocks(grads: Vec<(String, &[f64])>) -> Vec<(String, Vec<f64>)> {
    grads.into_iter().map(|(n, g)| (n, g.to_vec())).collect()
}

/// Optionally perturb one analytic gradient entry (negative-control hook).
fn maybe_corrupt(grads: &mut [(String, Vec<f64>)], corrupt: bool) {
    if corrupt {
        if let Some((_, g)) = grads.iter_mut().find(|(_, g)| !g.is_empty()) {
            g[0] += 0.5;
        }
    }
}

/// Run every gradient check group on tiny instances. With `corrupt` set,
/// one entry of each analytic gradient is deliberately wrong, so every
/// group must fail (used as a negative control).
pub fn run_gradcheck(seed: u64, corrupt: bool) -> Result<Vec<LossCheck>> {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = 4;
    let mut checks = Vec::new();

    // Group 1: value loss gradient.
    {
        let mut agent = Agent::new(&cfg, 0.01, &mut rng);
        let states = random_states(b, &cfg, &mut rng);
        let targets = Array1::from_shape_fn(b, |i| 0.4 * i as f64 - 0.6);
        let (_, grads) = value_loss_and_grad(&agent.value, &states, &targets)?;
        let mut analytic = to_owned_blocks(grads.blocks());
        maybe_corrupt(&mut analytic, corrupt);
        let report = check_gradients(
            &mut agent.value,
            |net| value_loss(net, &states, &targets),
            &analytic,
            GRADCHECK_STEP,
        )?;
        checks.push(LossCheck {
            name: "value_loss",
            report,
        });
    }

    // Group 2: Q loss gradient.
    {
        let mut agent = Agent::new(&cfg, 0.01, &mut rng);
        let states = random_states(b, &cfg, &mut rng);
        let joint = normal(b, cfg.joint_action_dim(), &mut rng);
        let targets = Array1::from_shape_fn(b, |i| 0.3 * i as f64);
        let (_, grads) = q_loss_and_grad(&agent.q1, &states, &joint, &targets)?;
        let mut analytic = to_owned_blocks(grads.blocks());
        maybe_corrupt(&mut analytic, corrupt);
        let report = check_gradients(
            &mut agent.q1,
            |net| q_loss(net, &states, &joint, &targets),
            &analytic,
            GRADCHECK_STEP,
        )?;
        checks.push(LossCheck {
            name: "q_loss",
            report,
        });
    }

    // Group 3: actor loss gradient (through the reparameterized action
    // into frozen critics).
    {
        let mut agent = Agent::new(&cfg, 0.01, &mut rng);
        let states = random_states(b, &cfg, &mut rng);
        let phi = normal(b, cfg.d_sig, &mut rng);
        let joint = normal(b, cfg.joint_action_dim(), &mut rng);
        let eps = normal(b, cfg.d_item, &mut rng);
        let batch = ActorBatch {
            states: &states,
            phi: &phi,
            replay_joint: &joint,
            eps: &eps,
            agent_index: 0,
            beta: 1.0,
        };
        let (_, grads) = actor_loss_and_grad(&agent.actor, &agent.q1, &agent.q2, &batch)?;
        let mut analytic = to_owned_blocks(grads.blocks());
        maybe_corrupt(&mut analytic, corrupt);
        let q1 = agent.q1.clone();
        let q2 = agent.q2.clone();
        let report = check_gradients(
            &mut agent.actor,
            |actor| actor_loss(actor, &q1, &q2, &batch),
            &analytic,
            GRADCHECK_STEP,
        )?;
        checks.push(LossCheck {
            name: "actor_loss",
            report,
        });
    }

    // Group 4: signal loss gradient (through reparameterized signals and
    // actions into frozen policies and critics, plus the entropy term).
    {
        let mut sig = SignalNet::new(&cfg, 0.01, &mut rng);
        let agents: Vec<Agent> = (0..cfg.n_agents)
            .map(|_| Agent::new(&cfg, 0.01, &mut rng))
            .collect();
        let states = random_states(b, &cfg, &mut rng);
        let joint = normal(b, cfg.joint_action_dim(), &mut rng);
        let eps_phi: Vec<Array2<f64>> = (0..cfg.n_agents)
            .map(|_| normal(b, cfg.d_sig, &mut rng))
            .collect();
        let eps_a: Vec<Array2<f64>> = (0..cfg.n_agents)
            .map(|_| normal(b, cfg.d_item, &mut rng))
            .collect();
        let batch = SignalBatch {
            states: &states,
            replay_joint: &joint,
            eps_phi: &eps_phi,
            eps_a: &eps_a,
            alpha: 0.01,
        };
        let (_, grads) = signal_loss_and_grad(&sig.net, &agents, &batch)?;
        let mut analytic = to_owned_blocks(grads.blocks());
        maybe_corrupt(&mut analytic, corrupt);
        let report = check_gradients(
            &mut sig.net,
            |net| signal_loss(net, &agents, &batch),
            &analytic,
            GRADCHECK_STEP,
        )?;
        checks.push(LossCheck {
            name: "signal_loss",
            report,
        });
    }

    // Group 5: embedding backward (attention pooling, softmax, lookups)
    // under a quadratic probe loss.
    {
        let mut emb = StateEmbedder::new(cfg.embedding.clone(), &mut rng);
        let states = random_states(3, &cfg, &mut rng);
        let dim = emb.state_dim();
        let target = Array2::from_shape_fn((3, dim), |(i, j)| ((i * 13 + j) as f64 * 0.21).cos());
        let (es, cache) = emb.forward_batch(&states)?;
        let diff = &es - &target;
        let grads = emb.backward(&cache, &diff)?;
        let mut analytic = to_owned_blocks(grads.blocks());
        maybe_corrupt(&mut analytic, corrupt);
        let report = check_gradients(
            &mut emb,
            |m| {
                let (es, _) = m.forward_batch(&states)?;
                let d = &es - &target;
                Ok(0.5 * d.iter().map(|v| v * v).sum::<f64>())
            },
            &analytic,
            GRADCHECK_STEP,
        )?;
        checks.push(LossCheck {
            name: "embedding_backward",
            report,
        });
    }

    Ok(checks)
}
