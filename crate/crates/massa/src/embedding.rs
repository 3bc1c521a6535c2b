//! State embedding: categorical tables plus attention pooling over the
//! clicked-item history.
//!
//! A user state is a set of static categorical ids and a fixed-length
//! history of `(item, seller, category)` id triples, zero-padded. Each id
//! type has its own embedding table; id 0 is the padding row, pinned to
//! zero and excluded from the trainable parameters. History vectors `h_k`
//! are pooled by a small attention network conditioned on the static
//! embedding, or flat-concatenated when attention is ablated.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Activation, DenseNet, NetCache, NetGrads, ParamBlocks};

/// One clicked-item record in a user's history. Id 0 means padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub item_id: usize,
    pub seller_id: usize,
    pub category_id: usize,
}

impl HistoryRecord {
    pub const PADDING: HistoryRecord = HistoryRecord {
        item_id: 0,
        seller_id: 0,
        category_id: 0,
    };

    pub fn is_padding(&self) -> bool {
        self.item_id == 0
    }
}

/// The MDP state: static categorical features plus exactly `K` history
/// records (newest first), zero-padded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserState {
    #[serde(rename = "static")]
    pub static_ids: Vec<usize>,
    pub history: Vec<HistoryRecord>,
}

impl UserState {
    /// Push one clicked record at the head, dropping the oldest entry.
    pub fn push_click(&mut self, record: HistoryRecord) {
        self.history.pop();
        self.history.insert(0, record);
    }
}

/// How history vectors are pooled into `e_sequential`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Softmax attention over per-record scalar logits.
    Attention,
    /// Flat concatenation `[h_1 | ... | h_K]` (attention ablation).
    Concat,
}

/// Shape of one embedding stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Cardinality per static feature, padding row included.
    pub static_cardinalities: Vec<usize>,
    pub static_dim: usize,
    pub item_cardinality: usize,
    pub seller_cardinality: usize,
    pub category_cardinality: usize,
    /// Embedding width per sequential id type; `h_k` is three of these.
    pub seq_dim: usize,
    pub history_len: usize,
    pub attention_hidden: Vec<usize>,
    pub mode: PoolingMode,
}

impl EmbeddingConfig {
    pub fn static_total(&self) -> usize {
        self.static_cardinalities.len() * self.static_dim
    }

    pub fn h_dim(&self) -> usize {
        3 * self.seq_dim
    }

    pub fn sequential_dim(&self) -> usize {
        match self.mode {
            PoolingMode::Attention => self.h_dim(),
            PoolingMode::Concat => self.history_len * self.h_dim(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.static_total() + self.sequential_dim()
    }
}

/// The embedding of one state, split into its parts.
#[derive(Debug, Clone)]
pub struct StateEmbedding {
    pub e_static: Vec<f64>,
    pub e_sequential: Vec<f64>,
    pub e_s: Vec<f64>,
}

/// Embedding tables plus the attention network. Each actor, critic, value
/// and signal network owns an independent instance; nothing is shared.
#[derive(Debug, Clone)]
pub struct StateEmbedder {
    cfg: EmbeddingConfig,
    static_tables: Vec<Array2<f64>>,
    item_table: Array2<f64>,
    seller_table: Array2<f64>,
    category_table: Array2<f64>,
    attention: Option<DenseNet>,
}

/// Forward caches needed by `backward`.
#[derive(Debug, Clone)]
pub struct EmbedCache {
    static_ids: Vec<Vec<usize>>,
    hist_ids: Vec<Vec<HistoryRecord>>,
    e_static: Array2<f64>,
    /// `(B*K) x h_dim`, row `b*K + k`.
    h: Array2<f64>,
    att_net: Option<NetCache>,
    /// `B x K` softmax weights (attention mode only).
    weights: Option<Array2<f64>>,
}

/// Gradients w.r.t. all tables and the attention net. Table arrays are
/// full-shape; the padding row 0 stays zero.
#[derive(Debug, Clone)]
pub struct EmbedGrads {
    pub static_tables: Vec<Array2<f64>>,
    pub item_table: Array2<f64>,
    pub seller_table: Array2<f64>,
    pub category_table: Array2<f64>,
    pub attention: Option<NetGrads>,
}

impl EmbedGrads {
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        let dim = self.item_table.ncols();
        for (f, t) in self.static_tables.iter().enumerate() {
            let d = t.ncols();
            out.push((format!("static{f}"), &t.as_slice().unwrap()[d..]));
        }
        out.push(("item".into(), &self.item_table.as_slice().unwrap()[dim..]));
        out.push((
            "seller".into(),
            &self.seller_table.as_slice().unwrap()[self.seller_table.ncols()..],
        ));
        out.push((
            "category".into(),
            &self.category_table.as_slice().unwrap()[self.category_table.ncols()..],
        ));
        if let Some(att) = &self.attention {
            for (name, b) in att.blocks() {
                out.push((format!("att.{name}"), b));
            }
        }
        out
    }
}

fn init_table(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut t = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.1..0.1));
    t.row_mut(0).fill(0.0); // padding row
    t
}

impl StateEmbedder {
    pub fn new(cfg: EmbeddingConfig, rng: &mut impl Rng) -> Self {
        assert!(cfg.history_len > 0, "history length must be positive");
        let static_tables = cfg
            .static_cardinalities
            .iter()
            .map(|&card| init_table(card, cfg.static_dim, rng))
            .collect();
        let item_table = init_table(cfg.item_cardinality, cfg.seq_dim, rng);
        let seller_table = init_table(cfg.seller_cardinality, cfg.seq_dim, rng);
        let category_table = init_table(cfg.category_cardinality, cfg.seq_dim, rng);
        let attention = match cfg.mode {
            PoolingMode::Attention => {
                let mut dims = vec![cfg.static_total() + cfg.h_dim()];
                dims.extend_from_slice(&cfg.attention_hidden);
                dims.push(1);
                Some(DenseNet::new(&dims, Activation::Relu, rng))
            }
            PoolingMode::Concat => None,
        };
        Self {
            cfg,
            static_tables,
            item_table,
            seller_table,
            category_table,
            attention,
        }
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn check_state(&self, state: &UserState) -> Result<()> {
        if state.static_ids.len() != self.cfg.static_cardinalities.len() {
            return Err(Error::DimMismatch {
                context: "UserState static features",
                expected: self.cfg.static_cardinalities.len(),
                got: state.static_ids.len(),
            });
        }
        if state.history.len() != self.cfg.history_len {
            return Err(Error::DimMismatch {
                context: "UserState history length",
                expected: self.cfg.history_len,
                got: state.history.len(),
            });
        }
        for (f, &id) in state.static_ids.iter().enumerate() {
            let card = self.cfg.static_cardinalities[f];
            if id >= card {
                return Err(Error::IdOutOfRange {
                    table: format!("static{f}"),
                    id,
                    cardinality: card,
                });
            }
        }
        for r in &state.history {
            if r.item_id >= self.cfg.item_cardinality {
                return Err(Error::IdOutOfRange {
                    table: "item".into(),
                    id: r.item_id,
                    cardinality: self.cfg.item_cardinality,
                });
            }
            if r.seller_id >= self.cfg.seller_cardinality {
                return Err(Error::IdOutOfRange {
                    table: "seller".into(),
                    id: r.seller_id,
                    cardinality: self.cfg.seller_cardinality,
                });
            }
            if r.category_id >= self.cfg.category_cardinality {
                return Err(Error::IdOutOfRange {
                    table: "category".into(),
                    id: r.category_id,
                    cardinality: self.cfg.category_cardinality,
                });
            }
        }
        Ok(())
    }

    /// Look up and concatenate the three per-type rows of every history
    /// record: `h_k = [item | seller | category]`.
    pub fn embed_history(&self, history: &[HistoryRecord]) -> Result<Vec<Vec<f64>>> {
        let d = self.cfg.seq_dim;
        history
            .iter()
            .map(|r| {
                if r.item_id >= self.cfg.item_cardinality {
                    return Err(Error::IdOutOfRange {
                        table: "item".into(),
                        id: r.item_id,
                        cardinality: self.cfg.item_cardinality,
                    });
                }
                let mut h = Vec::with_capacity(3 * d);
                h.extend(self.item_table.row(r.item_id).iter());
                h.extend(self.seller_table.row(r.seller_id).iter());
                h.extend(self.category_table.row(r.category_id).iter());
                Ok(h)
            })
            .collect()
    }

    /// Attention weights for a single state: softmax over per-record
    /// scalar logits of `att([e_static | h_k])`.
    pub fn attention_weights(&self, state: &UserState) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let (_, cache) = self.forward_batch(std::slice::from_ref(state))?;
        match cache.weights {
            Some(w) => Ok(w.row(0).to_vec()),
            None => Err(Error::RejectedInput(
                "attention weights requested in concat pooling mode".into(),
            )),
        }
    }

    /// Embed one state, returning the split parts.
    pub fn embed_state(&self, state: &UserState) -> Result<StateEmbedding> {
        self.check_state(state)?;
        let (es, cache) = self.forward_batch(std::slice::from_ref(state))?;
        let st = self.cfg.static_total();
        let row = es.row(0).to_vec();
        Ok(StateEmbedding {
            e_static: cache.e_static.row(0).to_vec(),
            e_sequential: row[st..].to_vec(),
            e_s: row,
        })
    }

    /// Batched forward: `B` states to a `B x state_dim` matrix plus cache.
    pub fn forward_batch(&self, states: &[UserState]) -> Result<(Array2<f64>, EmbedCache)> {
        let b = states.len();
        let k = self.cfg.history_len;
        let sd = self.cfg.static_dim;
        let st = self.cfg.static_total();
        let hd = self.cfg.h_dim();
        let qd = self.cfg.seq_dim;

        for state in states {
            self.check_state(state)?;
        }

        let mut e_static = Array2::zeros((b, st));
        for (bi, state) in states.iter().enumerate() {
            for (f, &id) in state.static_ids.iter().enumerate() {
                e_static
                    .slice_mut(s![bi, f * sd..(f + 1) * sd])
                    .assign(&self.static_tables[f].row(id));
            }
        }

        let mut h = Array2::zeros((b * k, hd));
        for (bi, state) in states.iter().enumerate() {
            for (ki, r) in state.history.iter().enumerate() {
                let row = bi * k + ki;
                h.slice_mut(s![row, 0..qd]).assign(&self.item_table.row(r.item_id));
                h.slice_mut(s![row, qd..2 * qd])
                    .assign(&self.seller_table.row(r.seller_id));
                h.slice_mut(s![row, 2 * qd..3 * qd])
                    .assign(&self.category_table.row(r.category_id));
            }
        }

        let (e_s, att_net, weights) = match &self.attention {
            Some(att) => {
                // Attention input rows: [e_static_b | h_{b,k}].
                let mut att_in = Array2::zeros((b * k, st + hd));
                for bi in 0..b {
                    for ki in 0..k {
                        let row = bi * k + ki;
                        att_in.slice_mut(s![row, ..st]).assign(&e_static.row(bi));
                        att_in.slice_mut(s![row, st..]).assign(&h.row(row));
                    }
                }
                let (logits, att_cache) = att.forward_batch(&att_in)?;
                let mut w = Array2::zeros((b, k));
                for bi in 0..b {
                    for ki in 0..k {
                        w[(bi, ki)] = logits[(bi * k + ki, 0)];
                    }
                }
                softmax_rows(&mut w);
                let mut e_seq = Array2::zeros((b, hd));
                for bi in 0..b {
                    for ki in 0..k {
                        let wk = w[(bi, ki)];
                        let hrow = h.row(bi * k + ki);
                        e_seq
                            .row_mut(bi)
                            .zip_mut_with(&hrow, |o, &v| *o += wk * v);
                    }
                }
                let mut e_s = Array2::zeros((b, st + hd));
                e_s.slice_mut(s![.., ..st]).assign(&e_static);
                e_s.slice_mut(s![.., st..]).assign(&e_seq);
                (e_s, Some(att_cache), Some(w))
            }
            None => {
                let mut e_s = Array2::zeros((b, st + k * hd));
                e_s.slice_mut(s![.., ..st]).assign(&e_static);
                for bi in 0..b {
                    for ki in 0..k {
                        e_s.slice_mut(s![bi, st + ki * hd..st + (ki + 1) * hd])
                            .assign(&h.row(bi * k + ki));
                    }
                }
                (e_s, None, None)
            }
        };

        Ok((
            e_s,
            EmbedCache {
                static_ids: states.iter().map(|u| u.static_ids.clone()).collect(),
                hist_ids: states.iter().map(|u| u.history.clone()).collect(),
                e_static,
                h,
                att_net,
                weights,
            },
        ))
    }

    /// Backward through pooling, softmax and lookups. Upstream is
    /// `B x state_dim`; table gradients accumulate by scatter-add and the
    /// padding row 0 receives exactly zero.
    pub fn backward(&self, cache: &EmbedCache, d_es: &Array2<f64>) -> Result<EmbedGrads> {
        let b = cache.static_ids.len();
        let k = self.cfg.history_len;
        let st = self.cfg.static_total();
        let hd = self.cfg.h_dim();
        let sd = self.cfg.static_dim;
        let qd = self.cfg.seq_dim;

        if d_es.ncols() != self.state_dim() || d_es.nrows() != b {
            return Err(Error::DimMismatch {
                context: "StateEmbedder::backward upstream",
                expected: self.state_dim(),
                got: d_es.ncols(),
            });
        }

        let mut d_static = d_es.slice(s![.., ..st]).to_owned();
        let mut d_h = Array2::zeros((b * k, hd));

        let mut grads = EmbedGrads {
            static_tables: self
                .static_tables
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect(),
            item_table: Array2::zeros(self.item_table.dim()),
            seller_table: Array2::zeros(self.seller_table.dim()),
            category_table: Array2::zeros(self.category_table.dim()),
            attention: None,
        };

        match (&self.attention, &cache.att_net, &cache.weights) {
            (Some(att), Some(att_cache), Some(w)) => {
                let d_eseq = d_es.slice(s![.., st..]);
                // d_w and d_h through the weighted sum.
                let mut d_logits = Array2::zeros((b * k, 1));
                for bi in 0..b {
                    let d_seq_row = d_eseq.row(bi);
                    let mut d_w = Array1::zeros(k);
                    for ki in 0..k {
                        let row = bi * k + ki;
                        let hrow = cache.h.row(row);
                        d_w[ki] = d_seq_row.dot(&hrow);
                        d_h.row_mut(row)
                            .zip_mut_with(&d_seq_row, |o, &v| *o += w[(bi, ki)] * v);
                    }
                    // Softmax backward: dl_k = w_k (dw_k - sum_j w_j dw_j).
                    let dot: f64 = (0..k).map(|j| w[(bi, j)] * d_w[j]).sum();
                    for ki in 0..k {
                        d_logits[(bi * k + ki, 0)] = w[(bi, ki)] * (d_w[ki] - dot);
                    }
                }
                let (att_grads, d_att_in) = att.backward_batch(att_cache, &d_logits)?;
                // Split attention input grads back to e_static and h.
                for bi in 0..b {
                    for ki in 0..k {
                        let row = bi * k + ki;
                        d_static
                            .row_mut(bi)
                            .zip_mut_with(&d_att_in.slice(s![row, ..st]), |o, &v| *o += v);
                        d_h.row_mut(row)
                            .zip_mut_with(&d_att_in.slice(s![row, st..]), |o, &v| *o += v);
                    }
                }
                grads.attention = Some(att_grads);
            }
            _ => {
                // Concat mode: the sequential slice maps directly onto h rows.
                for bi in 0..b {
                    for ki in 0..k {
                        d_h.row_mut(bi * k + ki)
                            .assign(&d_es.slice(s![bi, st + ki * hd..st + (ki + 1) * hd]));
                    }
                }
            }
        }

        // Scatter into tables; id 0 is padding and stays zero.
        for bi in 0..b {
            for (f, &id) in cache.static_ids[bi].iter().enumerate() {
                if id == 0 {
                    continue;
                }
                grads.static_tables[f]
                    .row_mut(id)
                    .zip_mut_with(&d_static.slice(s![bi, f * sd..(f + 1) * sd]), |o, &v| {
                        *o += v
                    });
            }
            for (ki, r) in cache.hist_ids[bi].iter().enumerate() {
                let row = bi * k + ki;
                if r.item_id != 0 {
                    grads
                        .item_table
                        .row_mut(r.item_id)
                        .zip_mut_with(&d_h.slice(s![row, 0..qd]), |o, &v| *o += v);
                }
                if r.seller_id != 0 {
                    grads
                        .seller_table
                        .row_mut(r.seller_id)
                        .zip_mut_with(&d_h.slice(s![row, qd..2 * qd]), |o, &v| *o += v);
                }
                if r.category_id != 0 {
                    grads
                        .category_table
                        .row_mut(r.category_id)
                        .zip_mut_with(&d_h.slice(s![row, 2 * qd..3 * qd]), |o, &v| *o += v);
                }
            }
        }
        Ok(grads)
    }
}

impl ParamBlocks for StateEmbedder {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (f, t) in self.static_tables.iter().enumerate() {
            let d = t.ncols();
            out.push((format!("static{f}"), &t.as_slice().unwrap()[d..]));
        }
        out.push((
            "item".into(),
            &self.item_table.as_slice().unwrap()[self.item_table.ncols()..],
        ));
        out.push((
            "seller".into(),
            &self.seller_table.as_slice().unwrap()[self.seller_table.ncols()..],
        ));
        out.push((
            "category".into(),
            &self.category_table.as_slice().unwrap()[self.category_table.ncols()..],
        ));
        if let Some(att) = &self.attention {
            for (name, b) in att.blocks() {
                out.push((format!("att.{name}"), b));
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (f, t) in self.static_tables.iter_mut().enumerate() {
            let d = t.ncols();
            out.push((format!("static{f}"), &mut t.as_slice_mut().unwrap()[d..]));
        }
        let d = self.item_table.ncols();
        out.push(("item".into(), &mut self.item_table.as_slice_mut().unwrap()[d..]));
        let d = self.seller_table.ncols();
        out.push((
            "seller".into(),
            &mut self.seller_table.as_slice_mut().unwrap()[d..],
        ));
        let d = self.category_table.ncols();
        out.push((
            "category".into(),
            &mut self.category_table.as_slice_mut().unwrap()[d..],
        ));
        if let Some(att) = &mut self.attention {
            for (name, b) in att.blocks_mut() {
                out.push((format!("att.{name}"), b));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(k: usize, mode: PoolingMode) -> EmbeddingConfig {
        EmbeddingConfig {
            static_cardinalities: vec![4, 3],
            static_dim: 3,
            item_cardinality: 6,
            seller_cardinality: 4,
            category_cardinality: 3,
            seq_dim: 2,
            history_len: k,
            attention_hidden: vec![5],
            mode,
        }
    }

    fn state(static_ids: Vec<usize>, hist: Vec<(usize, usize, usize)>, k: usize) -> UserState {
        let mut history: Vec<HistoryRecord> = hist
            .into_iter()
            .map(|(i, s, c)| HistoryRecord {
                item_id: i,
                seller_id: s,
                category_id: c,
            })
            .collect();
        history.resize(k, HistoryRecord::PADDING);
        UserState {
            static_ids,
            history,
        }
    }

    #[test]
    fn all_padding_history_embeds_to_zero_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = StateEmbedder::new(tiny_cfg(4, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 2], vec![], 4);
        let h = emb.embed_history(&st.history).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        let se = emb.embed_state(&st).unwrap();
        assert!(se.e_sequential.iter().all(|&x| x == 0.0));
        assert_eq!(se.e_s.len(), se.e_static.len() + se.e_sequential.len());
    }

    #[test]
    fn single_known_id_concatenates_table_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = StateEmbedder::new(tiny_cfg(2, PoolingMode::Attention), &mut rng);
        let h = emb
            .embed_history(&[HistoryRecord {
                item_id: 3,
                seller_id: 1,
                category_id: 2,
            }])
            .unwrap();
        let mut expect: Vec<f64> = emb.item_table.row(3).to_vec();
        expect.extend(emb.seller_table.row(1).iter());
        expect.extend(emb.category_table.row(2).iter());
        assert_eq!(h[0], expect);
    }

    #[test]
    fn random_history_matches_lookup_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = StateEmbedder::new(tiny_cfg(3, PoolingMode::Attention), &mut rng);
        let st = state(vec![2, 1], vec![(1, 2, 1), (4, 3, 2), (5, 1, 1)], 3);
        let h = emb.embed_history(&st.history).unwrap();
        for (k, r) in st.history.iter().enumerate() {
            let mut expect: Vec<f64> = emb.item_table.row(r.item_id).to_vec();
            expect.extend(emb.seller_table.row(r.seller_id).iter());
            expect.extend(emb.category_table.row(r.category_id).iter());
            assert_eq!(h[k], expect);
        }
    }

    #[test]
    fn out_of_range_id_names_the_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = StateEmbedder::new(tiny_cfg(2, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 1], vec![(1, 1, 1), (2, 9, 1)], 2);
        let err = emb.embed_state(&st).unwrap_err();
        assert!(err.to_string().contains("seller"), "{err}");
    }

    #[test]
    fn identical_history_records_get_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = 4;
        let emb = StateEmbedder::new(tiny_cfg(k, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 2], vec![(2, 1, 1); 4], k);
        let w = emb.attention_weights(&st).unwrap();
        for &wk in &w {
            assert!((wk - 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_normalize_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = StateEmbedder::new(tiny_cfg(3, PoolingMode::Attention), &mut rng);
        let st = state(vec![2, 1], vec![(1, 1, 1), (3, 2, 2), (5, 3, 1)], 3);
        let w = emb.attention_weights(&st).unwrap();
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // Shift invariance is a property of softmax itself.
        let logits = [0.3, -1.1, 2.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        let a = crate::nn::softmax(&logits);
        let b = crate::nn::softmax(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form_quarter_three_quarters() {
        let w = crate::nn::softmax(&[0.0, 3.0f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-12);
        assert!((w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn permuting_history_permutes_weights_and_preserves_pooled_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let emb = StateEmbedder::new(tiny_cfg(3, PoolingMode::Attention), &mut rng);
        let st = state(vec![2, 1], vec![(1, 1, 1), (3, 2, 2), (5, 3, 1)], 3);
        let mut permuted = st.clone();
        permuted.history.swap(0, 2);
        let (w1, w2) = (
            emb.attention_weights(&st).unwrap(),
            emb.attention_weights(&permuted).unwrap(),
        );
        assert!((w1[0] - w2[2]).abs() < 1e-12);
        assert!((w1[2] - w2[0]).abs() < 1e-12);
        let e1 = emb.embed_state(&st).unwrap().e_sequential;
        let e2 = emb.embed_state(&permuted).unwrap().e_sequential;
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_limit_selects_single_record() {
        // With one history record and the rest padding, a large logit gap
        // is guaranteed only when attention favors the non-padding row, so
        // instead verify the weighted-sum contract with a manufactured
        // weight vector: weights concentrated on one record reproduce it.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let emb = StateEmbedder::new(tiny_cfg(2, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 1], vec![(2, 1, 1), (4, 2, 2)], 2);
        let h = emb.embed_history(&st.history).unwrap();
        // Softmax of logits with gap >= 30 is one-hot to double precision.
        let w = crate::nn::softmax(&[0.0, 30.0]);
        let pooled: Vec<f64> = (0..h[0].len())
            .map(|j| w[0] * h[0][j] + w[1] * h[1][j])
            .collect();
        for (p, e) in pooled.iter().zip(h[1].iter()) {
            assert!((p - e).abs() < 1e-11);
        }
    }

    #[test]
    fn embed_state_matches_weighted_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let emb = StateEmbedder::new(tiny_cfg(3, PoolingMode::Attention), &mut rng);
        let st = state(vec![3, 2], vec![(1, 2, 2), (4, 1, 1), (2, 3, 2)], 3);
        let h = emb.embed_history(&st.history).unwrap();
        let w = emb.attention_weights(&st).unwrap();
        let se = emb.embed_state(&st).unwrap();
        for j in 0..se.e_sequential.len() {
            let expect: f64 = (0..3).map(|k| w[k] * h[k][j]).sum();
            assert!((se.e_sequential[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let emb = StateEmbedder::new(tiny_cfg(2, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 1], vec![(2, 1, 1)], 2);
        let (es, cache) = emb.forward_batch(std::slice::from_ref(&st)).unwrap();
        let zeros = Array2::zeros(es.dim());
        let grads = emb.backward(&cache, &zeros).unwrap();
        for (_, b) in grads.blocks() {
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn padded_row_gradient_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let emb = StateEmbedder::new(tiny_cfg(3, PoolingMode::Attention), &mut rng);
        let st = state(vec![1, 2], vec![(2, 1, 1)], 3); // two padded slots
        let (es, cache) = emb.forward_batch(std::slice::from_ref(&st)).unwrap();
        let ones = Array2::from_elem(es.dim(), 1.0);
        let grads = emb.backward(&cache, &ones).unwrap();
        assert!(grads.item_table.row(0).iter().all(|&v| v == 0.0));
        assert!(grads.seller_table.row(0).iter().all(|&v| v == 0.0));
        assert!(grads.category_table.row(0).iter().all(|&v| v == 0.0));
    }

    fn finite_difference_case(mode: PoolingMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut emb = StateEmbedder::new(tiny_cfg(3, mode), &mut rng);
        let states = vec![
            state(vec![1, 2], vec![(1, 2, 2), (4, 1, 1)], 3),
            state(vec![3, 1], vec![(5, 3, 1), (2, 1, 2), (3, 2, 1)], 3),
        ];
        let dim = emb.state_dim();
        let target =
            Array2::from_shape_fn((2, dim), |(i, j)| ((i * 31 + j * 7) as f64 * 0.37).sin());

        // loss = 1/2 sum (e_s - target)^2; upstream = (e_s - target).
        let (es, cache) = emb.forward_batch(&states).unwrap();
        let diff = &es - &target;
        let grads = emb.backward(&cache, &diff).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grads
            .blocks()
            .into_iter()
            .map(|(n, b)| (n, b.to_vec()))
            .collect();

        let report = check_gradients(
            &mut emb,
            |m| {
                let (es, _) = m.forward_batch(&states)?;
                let d = &es - &target;
                Ok(0.5 * d.iter().map(|v| v * v).sum::<f64>())
            },
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(
            report.passes(1e-4),
            "mode {mode:?} max rel err {}\n{report}",
            report.max_rel_err()
        );
    }

    #[test]
    fn backward_matches_finite_differences_attention() {
        finite_difference_case(PoolingMode::Attention, 11);
    }

    #[test]
    fn backward_matches_finite_differences_concat() {
        finite_difference_case(PoolingMode::Concat, 12);
    }
}
