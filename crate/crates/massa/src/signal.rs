//! The shared soft signal network: one Gaussian signal per agent,
//! computed from the state alone, trained against the sum of all agents'
//! critics with an entropy regularizer. It is the only cross-agent
//! coupling at execution time; agents never exchange messages.

use ndarray::{s, Array2};
use rand::Rng;

use crate::agent::{substitute_agent_slice, ActMode, Agent};
use crate::embedding::UserState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StateNet, StateNetGrads};
use crate::nn::gaussian::{
    entropy_batch, log_prob_reparam_batch, sample_batch, split_raw_batch, GaussianParams,
};
use crate::nn::Adam;

/// Shared trunk with per-agent Gaussian heads, realized as one dense net
/// whose output layer is sliced per agent: agent `i` owns columns
/// `[i*2*d_sig, (i+1)*2*d_sig)` as `[mu | log_std]`.
#[derive(Debug, Clone)]
pub struct SignalNet {
    pub net: StateNet,
    pub opt: Adam,
    n_agents: usize,
    d_sig: usize,
}

/// Batched forward result kept around for the deferred signal update.
pub struct SignalForward {
    pub raw: Array2<f64>,
    pub cache: crate::model::StateNetCache,
    /// Per-agent `B x d_sig` sampled (or mean) signals.
    pub phi: Vec<Array2<f64>>,
    /// Per-agent noise used for sampling (zeros in deterministic mode).
    pub eps: Vec<Array2<f64>>,
}

impl SignalNet {
    pub fn new(cfg: &ModelConfig, learning_rate: f64, rng: &mut impl Rng) -> Self {
        let mut net = StateNet::new(
            &cfg.embedding,
            0,
            &cfg.hidden,
            cfg.n_agents * 2 * cfg.d_sig,
            rng,
        );
        net.scale_output_layer(0.01); // start near mu = 0, sigma = 1
        Self {
            net,
            opt: Adam::new(learning_rate),
            n_agents: cfg.n_agents,
            d_sig: cfg.d_sig,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn signal_dim(&self) -> usize {
        self.d_sig
    }

    /// Gaussian signal parameters for every agent at one state.
    pub fn forward(&self, state: &UserState) -> Result<Vec<GaussianParams>> {
        let (raw, _) = self.net.forward(std::slice::from_ref(state), None)?;
        let d2 = 2 * self.d_sig;
        let mut out = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let slice = raw.slice(s![0, i * d2..(i + 1) * d2]);
            let p = GaussianParams::from_raw(slice);
            if p.mean.iter().any(|v| !v.is_finite()) || p.std.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(
                    "signal net produced non-finite mu/sigma".into(),
                ));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Signals for one state: sampled (training) or the means (evaluation).
    pub fn sample(
        &self,
        state: &UserState,
        mode: ActMode,
        eps: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>> {
        let params = self.forward(state)?;
        match mode {
            ActMode::Deterministic => Ok(params.iter().map(|p| p.mean.to_vec()).collect()),
            ActMode::Stochastic => {
                let eps = eps.ok_or_else(|| {
                    Error::RejectedInput("stochastic signal sampling needs noise".into())
                })?;
                if eps.len() != self.n_agents {
                    return Err(Error::DimMismatch {
                        context: "signal noise per agent",
                        expected: self.n_agents,
                        got: eps.len(),
                    });
                }
                params
                    .iter()
                    .zip(eps.iter())
                    .map(|(p, e)| p.sample(e))
                    .collect()
            }
        }
    }

    /// Batched sampling over states; noise drawn from `rng` in stochastic
    /// mode. The returned structure carries everything the deferred
    /// signal update needs.
    pub fn sample_states(
        &self,
        states: &[UserState],
        mode: ActMode,
        rng: &mut impl Rng,
    ) -> Result<SignalForward> {
        let b = states.len();
        let (raw, cache) = self.net.forward(states, None)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(
                "signal net produced non-finite output".into(),
            ));
        }
        let d2 = 2 * self.d_sig;
        let mut phi = Vec::with_capacity(self.n_agents);
        let mut eps_all = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let slice = raw.slice(s![.., i * d2..(i + 1) * d2]).to_owned();
            let (mean, log_std, _) = split_raw_batch(&slice);
            let eps = match mode {
                ActMode::Deterministic => Array2::zeros((b, self.d_sig)),
                ActMode::Stochastic => Array2::from_shape_fn((b, self.d_sig), |_| {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
                }),
            };
            phi.push(sample_batch(&mean, &log_std, &eps));
            eps_all.push(eps);
        }
        Ok(SignalForward {
            raw,
            cache,
            phi,
            eps: eps_all,
        })
    }

    /// Closed-form entropy of each agent's signal distribution at `state`.
    pub fn entropies(&self, state: &UserState) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.iter().map(|p| p.entropy()).collect())
    }

    /// Mean per-agent entropies over a batch, from a stored forward.
    pub fn mean_entropies(&self, fwd: &SignalForward) -> Vec<f64> {
        let d2 = 2 * self.d_sig;
        (0..self.n_agents)
            .map(|i| {
                let slice = fwd.raw.slice(s![.., i * d2..(i + 1) * d2]).to_owned();
                let (_, log_std, _) = split_raw_batch(&slice);
                let h = entropy_batch(&log_std);
                h.sum() / h.len() as f64
            })
            .collect()
    }
}

/// Batch inputs of the signal loss. Other agents' actions come from the
/// replay buffer; each agent's own action is regenerated through its
/// (frozen) policy from the reparameterized signal.
pub struct SignalBatch<'a> {
    pub states: &'a [UserState],
    /// `B x N*d_item` joint replay actions.
    pub replay_joint: &'a Array2<f64>,
    /// Per-agent `B x d_sig` noise for the signal reparameterization.
    pub eps_phi: &'a [Array2<f64>],
    /// Per-agent `B x d_item` noise for the action reparameterization.
    pub eps_a: &'a [Array2<f64>],
    /// Signal entropy coefficient.
    pub alpha: f64,
}

/// `J_Phi = (1/N) sum_i mean[ -Q_min^i(s, a_-i, pi_i(s, phi_i)) + alpha log Phi_i(phi_i|s) ]`.
/// Evaluation only; used by finite differences.
pub fn signal_loss(signal: &StateNet, agents: &[Agent], batch: &SignalBatch) -> Result<f64> {
    let n = agents.len();
    let b = batch.states.len();
    let d_sig = batch.eps_phi[0].ncols();
    let (raw, _) = signal.forward(batch.states, None)?;
    let mut total = 0.0;
    for (i, agent) in agents.iter().enumerate() {
        let slice = raw.slice(s![.., i * 2 * d_sig..(i + 1) * 2 * d_sig]).to_owned();
        let (mean_p, log_std_p, _) = split_raw_batch(&slice);
        let phi = sample_batch(&mean_p, &log_std_p, &batch.eps_phi[i]);
        let log_phi = log_prob_reparam_batch(&log_std_p, &batch.eps_phi[i]);

        let (raw_a, _) = agent.actor.forward(batch.states, Some(&phi))?;
        let (mean_a, log_std_a, _) = split_raw_batch(&raw_a);
        let a_i = sample_batch(&mean_a, &log_std_a, &batch.eps_a[i]);
        let joint = substitute_agent_slice(batch.replay_joint, &a_i, i);
        let (q1, _) = agent.q1.forward(batch.states, Some(&joint))?;
        let (q2, _) = agent.q2.forward(batch.states, Some(&joint))?;
        for bi in 0..b {
            let qmin = q1[(bi, 0)].min(q2[(bi, 0)]);
            total += -qmin + batch.alpha * log_phi[bi];
        }
    }
    let loss = total / (n as f64 * b as f64);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("signal loss is not finite ({loss})")));
    }
    Ok(loss)
}

/// Signal loss plus analytic gradient w.r.t. the signal network's
/// parameters. Gradients flow along two paths per agent: through the
/// reparameterized signal into the (frozen) policy and on into the
/// winning critic head, and through the signal log-density.
pub fn signal_loss_and_grad(
    signal: &StateNet,
    agents: &[Agent],
    batch: &SignalBatch,
) -> Result<(f64, StateNetGrads)> {
    let n = agents.len();
    let b = batch.states.len();
    let d_sig = batch.eps_phi[0].ncols();
    let scale = 1.0 / (n as f64 * b as f64);
    let (raw, cache) = signal.forward(batch.states, None)?;
    let mut upstream = Array2::zeros(raw.dim());
    let mut total = 0.0;

    for (i, agent) in agents.iter().enumerate() {
        let cols = i * 2 * d_sig..(i + 1) * 2 * d_sig;
        let slice = raw.slice(s![.., cols.clone()]).to_owned();
        let (mean_p, log_std_p, mask_p) = split_raw_batch(&slice);
        let sigma_p = log_std_p.mapv(f64::exp);
        let phi = sample_batch(&mean_p, &log_std_p, &batch.eps_phi[i]);
        let log_phi = log_prob_reparam_batch(&log_std_p, &batch.eps_phi[i]);

        let (raw_a, cache_a) = agent.actor.forward(batch.states, Some(&phi))?;
        let (mean_a, log_std_a, mask_a) = split_raw_batch(&raw_a);
        let sigma_a = log_std_a.mapv(f64::exp);
        let a_i = sample_batch(&mean_a, &log_std_a, &batch.eps_a[i]);
        let joint = substitute_agent_slice(batch.replay_joint, &a_i, i);
        let (q1, c1) = agent.q1.forward(batch.states, Some(&joint))?;
        let (q2, c2) = agent.q2.forward(batch.states, Some(&joint))?;

        let d_item = batch.eps_a[i].ncols();
        let mut up1 = Array2::zeros((b, 1));
        let mut up2 = Array2::zeros((b, 1));
        for bi in 0..b {
            let (qa, qb) = (q1[(bi, 0)], q2[(bi, 0)]);
            let qmin = qa.min(qb);
            total += -qmin + batch.alpha * log_phi[bi];
            if qa <= qb {
                up1[(bi, 0)] = -scale;
            } else {
                up2[(bi, 0)] = -scale;
            }
        }
        // u = d(-scale * sum Q_min)/d a_i through the winning heads.
        let da1 = agent.q1.extra_grad(&c1, &up1);
        let da2 = agent.q2.extra_grad(&c2, &up2);
        let col = i * d_item;
        let u = &da1.slice(s![.., col..col + d_item]) + &da2.slice(s![.., col..col + d_item]);

        // Push u through the frozen policy to the signal input slice:
        // upstream on the policy raw head is [u | u*eps_a*sigma_a].
        let mut up_a = Array2::zeros((b, 2 * d_item));
        for bi in 0..b {
            for j in 0..d_item {
                up_a[(bi, j)] = u[(bi, j)];
                up_a[(bi, d_item + j)] =
                    mask_a[(bi, j)] * u[(bi, j)] * batch.eps_a[i][(bi, j)] * sigma_a[(bi, j)];
            }
        }
        let g_q_path = agent.actor.extra_grad(&cache_a, &up_a); // B x d_sig

        // Assemble the raw-head upstream for this agent's signal slice.
        for bi in 0..b {
            for j in 0..d_sig {
                let e = batch.eps_phi[i][(bi, j)];
                let sp = sigma_p[(bi, j)];
                // phi-path total: Q path plus the log-density's phi term.
                let g_phi = g_q_path[(bi, j)] + scale * batch.alpha * (-e / sp);
                let d_mu = scale * batch.alpha * (e / sp) + g_phi;
                let d_ls = mask_p[(bi, j)]
                    * (scale * batch.alpha * (e * e - 1.0) + g_phi * e * sp);
                upstream[(bi, i * 2 * d_sig + j)] = d_mu;
                upstream[(bi, i * 2 * d_sig + d_sig + j)] = d_ls;
            }
        }
    }

    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("signal loss is not finite ({loss})")));
    }
    let (grads, _) = signal.backward(&cache, &upstream)?;
    Ok((loss, grads))
}
