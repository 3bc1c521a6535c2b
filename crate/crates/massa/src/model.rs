//! Composite state-conditioned network: an embedding stack feeding a
//! dense net, with optional extra inputs concatenated after the state
//! embedding (signals for actors, joint actions for critics).

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedCache, EmbedGrads, EmbeddingConfig, StateEmbedder, UserState};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, NetCache, NetGrads, ParamBlocks};

/// Shapes of every learned component. One of these fully determines the
/// network architecture, so it travels inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_agents: usize,
    /// Item feature dim; also the action dim of every agent.
    pub d_item: usize,
    /// Signal vector length per agent.
    pub d_sig: usize,
    /// Hidden widths of policy/critic/value/signal trunks.
    pub hidden: Vec<usize>,
    pub embedding: EmbeddingConfig,
    /// False under the no-signal ablation: actors receive zero vectors.
    pub use_signal: bool,
}

impl ModelConfig {
    pub fn joint_action_dim(&self) -> usize {
        self.n_agents * self.d_item
    }
}

/// Embedding stack plus dense net. The net's input is
/// `[e_s | extra]` where `extra_dim` may be zero.
#[derive(Debug, Clone)]
pub struct StateNet {
    pub embedder: StateEmbedder,
    pub net: DenseNet,
    extra_dim: usize,
}

/// Forward caches for one batch.
#[derive(Debug)]
pub struct StateNetCache {
    pub embed: EmbedCache,
    pub net: NetCache,
}

/// Gradients for every parameter of a `StateNet`, block-aligned with
/// `ParamBlocks::blocks`.
#[derive(Debug, Clone)]
pub struct StateNetGrads {
    pub embed: EmbedGrads,
    pub net: NetGrads,
}

impl StateNetGrads {
    /// Euclidean norm over every entry of every block.
    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter().map(|v| v * v))
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every gradient entry in place (gradient-norm clipping).
    pub fn scale(&mut self, factor: f64) {
        for t in self.embed.static_tables.iter_mut() {
            t.mapv_inplace(|v| v * factor);
        }
        self.embed.item_table.mapv_inplace(|v| v * factor);
        self.embed.seller_table.mapv_inplace(|v| v * factor);
        self.embed.category_table.mapv_inplace(|v| v * factor);
        if let Some(att) = &mut self.embed.attention {
            for w in att.weights.iter_mut() {
                w.mapv_inplace(|v| v * factor);
            }
            for b in att.biases.iter_mut() {
                b.mapv_inplace(|v| v * factor);
            }
        }
        for w in self.net.weights.iter_mut() {
            w.mapv_inplace(|v| v * factor);
        }
        for b in self.net.biases.iter_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// Clip the global gradient norm to `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (n, b) in self.embed.blocks() {
            out.push((format!("embed.{n}"), b));
        }
        for (n, b) in self.net.blocks() {
            out.push((format!("net.{n}"), b));
        }
        out
    }
}

impl StateNet {
    /// Build with its own independent embedding instance.
    ///
    /// `head_dims` follows the embedding: `[hidden..., out]`. The final
    /// layer can be scaled down afterwards for Gaussian heads.
    pub fn new(
        embedding: &EmbeddingConfig,
        extra_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let embedder = StateEmbedder::new(embedding.clone(), rng);
        let mut dims = vec![embedder.state_dim() + extra_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let net = DenseNet::new(&dims, Activation::Relu, rng);
        Self {
            embedder,
            net,
            extra_dim,
        }
    }

    pub fn extra_dim(&self) -> usize {
        self.extra_dim
    }

    pub fn state_dim(&self) -> usize {
        self.embedder.state_dim()
    }

    /// Scale the output layer (both weights and biases) by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.net.n_layers() - 1;
        self.net.scale_layer(last, factor);
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.net.n_layers() - 1;
        self.net.zero_layer(last);
    }

    fn assemble_input(&self, es: &Array2<f64>, extra: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        match extra {
            None => {
                if self.extra_dim != 0 {
                    return Err(Error::DimMismatch {
                        context: "StateNet extra input",
                        expected: self.extra_dim,
                        got: 0,
                    });
                }
                Ok(es.clone())
            }
            Some(x) => {
                if x.ncols() != self.extra_dim {
                    return Err(Error::DimMismatch {
                        context: "StateNet extra input",
                        expected: self.extra_dim,
                        got: x.ncols(),
                    });
                }
                let mut input = Array2::zeros((es.nrows(), es.ncols() + x.ncols()));
                input.slice_mut(s![.., ..es.ncols()]).assign(es);
                input.slice_mut(s![.., es.ncols()..]).assign(x);
                Ok(input)
            }
        }
    }

    /// Full forward: embed states, concatenate `extra`, run the net.
    pub fn forward(
        &self,
        states: &[UserState],
        extra: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, StateNetCache)> {
        let (es, embed_cache) = self.embedder.forward_batch(states)?;
        let input = self.assemble_input(&es, extra)?;
        let (out, net_cache) = self.net.forward_batch(&input)?;
        Ok((
            out,
            StateNetCache {
                embed: embed_cache,
                net: net_cache,
            },
        ))
    }

    /// Full backward: through the net, then the state-embedding slice of
    /// the input gradient through the embedder. Returns parameter grads
    /// and the gradient w.r.t. `extra` (empty when `extra_dim == 0`).
    pub fn backward(
        &self,
        cache: &StateNetCache,
        upstream: &Array2<f64>,
    ) -> Result<(StateNetGrads, Array2<f64>)> {
        let (net_grads, d_input) = self.net.backward_batch(&cache.net, upstream)?;
        let sd = self.state_dim();
        let d_es = d_input.slice(s![.., ..sd]).to_owned();
        let d_extra = d_input.slice(s![.., sd..]).to_owned();
        let embed_grads = self.embedder.backward(&cache.embed, &d_es)?;
        Ok((
            StateNetGrads {
                embed: embed_grads,
                net: net_grads,
            },
            d_extra,
        ))
    }

    /// Gradient w.r.t. the `extra` slice of the input only. No parameter
    /// gradients, no embedding backward.
    pub fn extra_grad(&self, cache: &StateNetCache, upstream: &Array2<f64>) -> Array2<f64> {
        let d_input = self.net.input_grad_batch(&cache.net, upstream);
        let sd = self.state_dim();
        d_input.slice(s![.., sd..]).to_owned()
    }

    /// Polyak step toward `online`: `p_target = (1-delta) p_target + delta p_online`.
    pub fn polyak_from(&mut self, online: &StateNet, delta: f64) {
        assert!((0.0..=1.0).contains(&delta) && delta > 0.0, "delta in (0,1]");
        let src = online.blocks();
        let mut dst = self.blocks_mut();
        assert_eq!(src.len(), dst.len(), "polyak block mismatch");
        for ((sn, s), (dn, d)) in src.iter().zip(dst.iter_mut()) {
            assert_eq!(sn, dn, "polyak block order mismatch");
            for (dv, sv) in d.iter_mut().zip(s.iter()) {
                *dv = (1.0 - delta) * *dv + delta * sv;
            }
        }
    }
}

impl ParamBlocks for StateNet {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (n, b) in self.embedder.blocks() {
            out.push((format!("embed.{n}"), b));
        }
        for (n, b) in self.net.blocks() {
            out.push((format!("net.{n}"), b));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (n, b) in self.embedder.blocks_mut() {
            out.push((format!("embed.{n}"), b));
        }
        for (n, b) in self.net.blocks_mut() {
            out.push((format!("net.{n}"), b));
        }
        out
    }
}
