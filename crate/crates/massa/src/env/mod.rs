//! Synthetic multi-module recommendation environment: linear scoring,
//! top-k pages, a ground-truth page-level click model with cross-module
//! coupling, state transitions, and episode rollout.
//!
//! The click model scans the page in order (module 1 positions 1..k, then
//! module 2, ...) and assigns each slot
//!
//! ```text
//! p = clamp( logistic(u . e_item / sqrt(d)) * pb[pos] * mf[module] * rho^dup, 0, 1 )
//! ```
//!
//! with position bias `pb = [1.0, 0.8, 0.6]` (decaying by 0.8 per position
//! beyond the third), module factor `mf = [1.0, 0.5, ...]`, `rho = 0.3`,
//! and `dup` counting earlier page items that share the slot's category.
//! Duplicated categories are punished hard enough that the page-level
//! optimum requires inter-module category diversity, which is the
//! cooperation pressure the agents must discover.

pub mod dataset;
pub mod simulator;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{HistoryRecord, UserState};
use crate::error::{Error, Result};
use self::simulator::CtrSimulator;

/// Within-module position bias for the first three slots.
pub const POSITION_BIAS: [f64; 3] = [1.0, 0.8, 0.6];
/// Geometric decay applied per position beyond the third.
pub const POSITION_DECAY: f64 = 0.8;
/// Per-module attention factor: module m (0-based) gets `0.5^m`.
pub const MODULE_FACTOR: f64 = 0.5;
/// Duplicate-category punishment per earlier same-category page item.
pub const DUP_RHO: f64 = 0.3;

/// Position bias for a 0-based in-module rank.
pub fn position_bias(rank: usize) -> f64 {
    if rank < 3 {
        POSITION_BIAS[rank]
    } else {
        POSITION_BIAS[2] * POSITION_DECAY.powi(rank as i32 - 2)
    }
}

/// Module factor for a 0-based module index.
pub fn module_factor(module: usize) -> f64 {
    MODULE_FACTOR.powi(module as i32)
}

/// One catalog item. `item_id` starts at 1 (0 is the padding id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: usize,
    pub seller_id: usize,
    pub category_id: usize,
    pub features: Vec<f64>,
}

/// The full item catalog; `items[i].item_id == i + 1`.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub items: Vec<Item>,
    d_item: usize,
    n_categories: usize,
}

impl Catalog {
    pub fn new(items: Vec<Item>, n_categories: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::RejectedInput("empty catalog".into()));
        }
        let d_item = items[0].features.len();
        for (i, it) in items.iter().enumerate() {
            if it.item_id != i + 1 {
                return Err(Error::RejectedInput(format!(
                    "catalog item ids must be contiguous from 1; got {} at index {i}",
                    it.item_id
                )));
            }
            if it.features.len() != d_item {
                return Err(Error::DimMismatch {
                    context: "catalog item feature dim",
                    expected: d_item,
                    got: it.features.len(),
                });
            }
        }
        Ok(Self {
            items,
            d_item,
            n_categories,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d_item(&self) -> usize {
        self.d_item
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn item(&self, item_id: usize) -> Result<&Item> {
        self.items
            .get(item_id.wrapping_sub(1))
            .ok_or(Error::IdOutOfRange {
                table: "catalog".into(),
                id: item_id,
                cardinality: self.items.len() + 1,
            })
    }

    /// Unit-norm mean feature direction per category (index 0 unused).
    /// Used to synthesize preference vectors without hidden generator
    /// state, so a catalog file is self-contained.
    pub fn category_directions(&self) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; self.d_item]; self.n_categories + 1];
        let mut counts = vec![0usize; self.n_categories + 1];
        for it in &self.items {
            counts[it.category_id] += 1;
            for (s, f) in sums[it.category_id].iter_mut().zip(&it.features) {
                *s += f;
            }
        }
        for (c, sum) in sums.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in sum.iter_mut() {
                    *v /= norm;
                }
            }
        }
        sums
    }
}

/// Candidate item ids of one module, kept sorted ascending so that the
/// rank tie-break on index equals a tie-break on item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulePool {
    pub module_id: usize,
    pub item_ids: Vec<usize>,
}

/// The shown page: per module, the top-k item ids in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub modules: Vec<Vec<usize>>,
}

impl Page {
    pub fn validate(&self, k: usize) -> Result<()> {
        for (m, items) in self.modules.iter().enumerate() {
            if items.len() != k {
                return Err(Error::RejectedInput(format!(
                    "module {m} page slice has {} items, expected {k}",
                    items.len()
                )));
            }
            for i in 0..items.len() {
                for j in i + 1..items.len() {
                    if items[i] == items[j] {
                        return Err(Error::RejectedInput(format!(
                            "duplicate item {} within module {m}",
                            items[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A user as the environment knows them: the visible state plus the
/// hidden preference vector that only the click model sees.
#[derive(Debug, Clone)]
pub struct GroundTruthUser {
    pub state: UserState,
    pub preference: Vec<f64>,
}

/// Environment shape and generation knobs. Click-model constants are
/// fixed (see module docs); these control scale and the synthetic
/// population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_modules: usize,
    pub d_item: usize,
    pub catalog_size: usize,
    pub pool_size: usize,
    pub n_categories: usize,
    pub n_sellers: usize,
    /// Items shown per module on the page.
    pub page_k: usize,
    /// Rounds per episode.
    pub episode_len: usize,
    /// History slots in the visible state.
    pub k_history: usize,
    pub static_cardinalities: Vec<usize>,
    /// Fraction of feature variance shared within a category; features
    /// stay marginally standard normal.
    pub category_mix: f64,
    /// Preference strength along the user's primary/secondary category.
    pub pref_primary: f64,
    pub pref_secondary: f64,
    /// Isotropic noise added to the preference vector.
    pub pref_noise: f64,
    /// Gumbel-noise temperature of the logged-data behavior policy.
    pub behavior_temperature: f64,
    /// How many history slots a fresh user starts with.
    pub history_init: usize,
    /// One shared candidate pool for all modules (the page-competition
    /// setting) vs disjoint random pools.
    pub shared_pools: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EnvConfig {
    /// Desk-scale defaults: small enough to train in minutes.
    pub fn desk() -> Self {
        Self {
            n_modules: 2,
            d_item: 16,
            catalog_size: 500,
            pool_size: 200,
            n_categories: 10,
            n_sellers: 50,
            page_k: 3,
            episode_len: 20,
            k_history: 6,
            static_cardinalities: vec![8, 4, 6],
            category_mix: 0.6,
            pref_primary: 4.0,
            pref_secondary: 2.6,
            pref_noise: 0.3,
            behavior_temperature: 1.2,
            history_init: 4,
            shared_pools: true,
        }
    }

    /// Full-scale preset mirroring the reported real-data dimensions
    /// (118-dim items, 2000-item pools, 50-item histories).
    pub fn paper_scale() -> Self {
        Self {
            n_modules: 2,
            d_item: 118,
            catalog_size: 5000,
            pool_size: 2000,
            n_categories: 40,
            n_sellers: 500,
            page_k: 3,
            episode_len: 20,
            k_history: 50,
            static_cardinalities: vec![8, 4, 6],
            category_mix: 0.5,
            pref_primary: 2.2,
            pref_secondary: 1.5,
            pref_noise: 0.4,
            behavior_temperature: 2.0,
            history_init: 25,
            shared_pools: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_modules", self.n_modules),
            ("d_item", self.d_item),
            ("catalog_size", self.catalog_size),
            ("pool_size", self.pool_size),
            ("n_categories", self.n_categories),
            ("n_sellers", self.n_sellers),
            ("page_k", self.page_k),
            ("episode_len", self.episode_len),
            ("k_history", self.k_history),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.pool_size > self.catalog_size {
            return Err(Error::Config("pool_size exceeds catalog_size".into()));
        }
        if self.page_k > self.pool_size {
            return Err(Error::Config("page_k exceeds pool_size".into()));
        }
        if !(0.0..=1.0).contains(&self.category_mix) {
            return Err(Error::Config("category_mix must lie in [0,1]".into()));
        }
        if self.history_init > self.k_history {
            return Err(Error::Config("history_init exceeds k_history".into()));
        }
        Ok(())
    }
}

/// `score_j = a . e_j` for every item.
pub fn score_items(action: &[f64], items: &[&Item]) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            if it.features.len() != action.len() {
                return Err(Error::DimMismatch {
                    context: "score_items action",
                    expected: it.features.len(),
                    got: action.len(),
                });
            }
            Ok(action
                .iter()
                .zip(it.features.iter())
                .map(|(a, e)| a * e)
                .sum())
        })
        .collect()
}

/// Indices of the `k` largest scores, descending; ties break toward the
/// smaller index (callers keep candidate lists sorted by item id, making
/// this a tie-break on ascending item id).
pub fn rank_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::RejectedInput(format!(
            "rank_top_k: k={k} exceeds {} candidates",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Base click affinity of an item for a hidden preference vector.
pub fn base_affinity(preference: &[f64], item: &Item) -> f64 {
    let d = item.features.len() as f64;
    let z: f64 = preference
        .iter()
        .zip(item.features.iter())
        .map(|(u, e)| u * e)
        .sum();
    logistic(z / d.sqrt())
}

/// Click probability of every page slot in scan order (module 1 first,
/// ranks high to low within a module).
pub fn click_probabilities(
    user: &GroundTruthUser,
    page: &Page,
    catalog: &Catalog,
) -> Result<Vec<f64>> {
    let mut probs = Vec::new();
    let mut seen_categories: Vec<usize> = Vec::new();
    for (m, items) in page.modules.iter().enumerate() {
        for (rank, &item_id) in items.iter().enumerate() {
            let item = catalog.item(item_id)?;
            let dup = seen_categories
                .iter()
                .filter(|&&c| c == item.category_id)
                .count();
            let p = base_affinity(&user.preference, item)
                * position_bias(rank)
                * module_factor(m)
                * DUP_RHO.powi(dup as i32);
            probs.push(p.clamp(0.0, 1.0));
            seen_categories.push(item.category_id);
        }
    }
    Ok(probs)
}

/// Push the clicked records (in interaction order) into the history,
/// oldest entries falling off. The static part never changes.
pub fn transition_update(state: &UserState, clicked: &[HistoryRecord]) -> UserState {
    let mut next = state.clone();
    for r in clicked {
        next.push_click(*r);
    }
    next
}

/// Where clicks come from during rollouts.
#[derive(Debug, Clone)]
pub enum ClickModel {
    /// The hidden-preference ground truth.
    GroundTruth,
    /// A learned CTR simulator predicting from the visible state.
    Simulator(CtrSimulator),
}

/// Result of one environment round.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub page: Page,
    /// Clicks per module, aligned with the page.
    pub clicks: Vec<Vec<bool>>,
    /// Click count per module.
    pub rewards: Vec<f64>,
    pub next_state: UserState,
    /// True when the episode ended with this round.
    pub done: bool,
}

/// The rollout environment: catalog, per-module pools, one active user.
#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
    pub catalog: Catalog,
    pub pools: Vec<ModulePool>,
    click_model: ClickModel,
    /// Test hook scaling all click probabilities (clamped to [0,1]).
    click_scale: f64,
    rng: ChaCha8Rng,
    user: GroundTruthUser,
    t: usize,
}

impl Env {
    /// Generate a fresh environment (catalog, pools, first user).
    pub fn generate(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = generate_catalog(&cfg, &mut rng);
        let pools = generate_pools(&cfg, &mut rng);
        Self::from_parts(cfg, catalog, pools, seed.wrapping_add(1))
    }

    /// Build from an existing catalog and pools (e.g. loaded from files).
    pub fn from_parts(
        cfg: EnvConfig,
        catalog: Catalog,
        pools: Vec<ModulePool>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if pools.len() != cfg.n_modules {
            return Err(Error::Config(format!(
                "expected {} pools, got {}",
                cfg.n_modules,
                pools.len()
            )));
        }
        for p in &pools {
            if p.item_ids.is_empty() {
                return Err(Error::Config("empty module pool".into()));
            }
            for &id in &p.item_ids {
                catalog.item(id)?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user = sample_user(&catalog, &cfg, &mut rng);
        Ok(Self {
            cfg,
            catalog,
            pools,
            click_model: ClickModel::GroundTruth,
            click_scale: 1.0,
            rng,
            user,
            t: 0,
        })
    }

    pub fn with_click_model(mut self, model: ClickModel) -> Self {
        self.click_model = model;
        self
    }

    /// Test hook: scale all click probabilities (0 forces no clicks, a
    /// huge value saturates them at 1).
    pub fn set_click_scale(&mut self, scale: f64) {
        self.click_scale = scale;
    }

    pub fn current_user(&self) -> &GroundTruthUser {
        &self.user
    }

    pub fn state(&self) -> &UserState {
        &self.user.state
    }

    /// Replace the RNG stream (e.g. to branch a deterministic
    /// evaluation off a training environment).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Start a new episode with a freshly sampled user.
    pub fn reset(&mut self) -> UserState {
        self.user = sample_user(&self.catalog, &self.cfg, &mut self.rng);
        self.t = 0;
        self.user.state.clone()
    }

    /// Rank each module's pool with its agent's action and build the page.
    pub fn build_page(&self, actions: &[Vec<f64>]) -> Result<Page> {
        if actions.len() != self.cfg.n_modules {
            return Err(Error::DimMismatch {
                context: "env actions per module",
                expected: self.cfg.n_modules,
                got: actions.len(),
            });
        }
        let mut modules = Vec::with_capacity(self.cfg.n_modules);
        for (m, action) in actions.iter().enumerate() {
            let pool = &self.pools[m];
            let items: Vec<&Item> = pool
                .item_ids
                .iter()
                .map(|&id| self.catalog.item(id))
                .collect::<Result<_>>()?;
            let scores = score_items(action, &items)?;
            let top = rank_top_k(&scores, self.cfg.page_k)?;
            modules.push(top.into_iter().map(|i| pool.item_ids[i]).collect());
        }
        Ok(Page { modules })
    }

    /// Execute one round: rank, show the page, sample clicks, update the
    /// state. Rewards are per-module click counts.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepOutcome> {
        let page = self.build_page(actions)?;
        self.step_with_page(&page)
    }

    /// Same as `step` but with an externally supplied page (used by the
    /// enumeration oracle and fixed-page rollouts).
    pub fn step_with_page(&mut self, page: &Page) -> Result<StepOutcome> {
        page.validate(self.cfg.page_k)?;
        let probs = self.page_click_probabilities(page)?;
        let mut clicks = Vec::with_capacity(self.cfg.n_modules);
        let mut rewards = Vec::with_capacity(self.cfg.n_modules);
        let mut clicked_records = Vec::new();
        let mut slot = 0;
        for items in &page.modules {
            let mut module_clicks = Vec::with_capacity(items.len());
            let mut count = 0.0;
            for &item_id in items {
                let p = (probs[slot] * self.click_scale).clamp(0.0, 1.0);
                let clicked = self.rng.random::<f64>() < p;
                if clicked {
                    count += 1.0;
                    let it = self.catalog.item(item_id)?;
                    clicked_records.push(HistoryRecord {
                        item_id: it.item_id,
                        seller_id: it.seller_id,
                        category_id: it.category_id,
                    });
                }
                module_clicks.push(clicked);
                slot += 1;
            }
            clicks.push(module_clicks);
            rewards.push(count);
        }
        let next_state = transition_update(&self.user.state, &clicked_records);
        self.user.state = next_state.clone();
        self.t += 1;
        let done = self.t >= self.cfg.episode_len;
        Ok(StepOutcome {
            page: page.clone(),
            clicks,
            rewards,
            next_state,
            done,
        })
    }

    /// Click probabilities for a page under the configured click model.
    pub fn page_click_probabilities(&self, page: &Page) -> Result<Vec<f64>> {
        match &self.click_model {
            ClickModel::GroundTruth => click_probabilities(&self.user, page, &self.catalog),
            ClickModel::Simulator(sim) => sim.predict_page(&self.user.state, page),
        }
    }

    /// Expected clicks of a page under the ground-truth model (no
    /// sampling, no state change).
    pub fn expected_page_reward(&self, page: &Page) -> Result<f64> {
        Ok(click_probabilities(&self.user, page, &self.catalog)?
            .iter()
            .sum())
    }
}

/// Standard-normal item features with a within-category shared component:
/// `e = sqrt(w) proto_c + sqrt(1-w) g`, both prototype and idiosyncratic
/// parts standard normal.
pub fn generate_catalog(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Catalog {
    let w = cfg.category_mix;
    let prototypes: Vec<Vec<f64>> = (0..=cfg.n_categories)
        .map(|_| (0..cfg.d_item).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let items = (0..cfg.catalog_size)
        .map(|i| {
            let category_id = rng.random_range(1..=cfg.n_categories);
            let seller_id = rng.random_range(1..=cfg.n_sellers);
            let features = (0..cfg.d_item)
                .map(|j| {
                    let g: f64 = StandardNormal.sample(rng);
                    w.sqrt() * prototypes[category_id][j] + (1.0 - w).sqrt() * g
                })
                .collect();
            Item {
                item_id: i + 1,
                seller_id,
                category_id,
                features,
            }
        })
        .collect();
    Catalog::new(items, cfg.n_categories).expect("generated catalog is valid")
}

/// Candidate pools: one shared sorted sample for all modules, or disjoint
/// random slices.
pub fn generate_pools(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Vec<ModulePool> {
    let mut ids: Vec<usize> = (1..=cfg.catalog_size).collect();
    // Fisher-Yates restricted to what we need.
    for i in 0..cfg.catalog_size.min(cfg.pool_size * cfg.n_modules) {
        let j = rng.random_range(i..cfg.catalog_size);
        ids.swap(i, j);
    }
    if cfg.shared_pools {
        let mut pool: Vec<usize> = ids[..cfg.pool_size].to_vec();
        pool.sort_unstable();
        (0..cfg.n_modules)
            .map(|m| ModulePool {
                module_id: m + 1,
                item_ids: pool.clone(),
            })
            .collect()
    } else {
        (0..cfg.n_modules)
            .map(|m| {
                let lo = m * cfg.pool_size;
                let hi = ((m + 1) * cfg.pool_size).min(cfg.catalog_size);
                let mut pool: Vec<usize> = ids[lo..hi].to_vec();
                pool.sort_unstable();
                ModulePool {
                    module_id: m + 1,
                    item_ids: pool,
                }
            })
            .collect()
    }
}

/// Sample a user: two preferred categories (primary/secondary) define the
/// hidden preference; initial history holds their highest-affinity items.
pub fn sample_user(catalog: &Catalog, cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> GroundTruthUser {
    let dirs = catalog.category_directions();
    let g = catalog.n_categories();
    let c1 = rng.random_range(1..=g);
    let mut c2 = rng.random_range(1..=g);
    while c2 == c1 && g > 1 {
        c2 = rng.random_range(1..=g);
    }
    let scale = (cfg.d_item as f64).sqrt();
    let preference: Vec<f64> = (0..cfg.d_item)
        .map(|j| {
            let noise: f64 = StandardNormal.sample(rng);
            scale * (cfg.pref_primary * dirs[c1][j] + cfg.pref_secondary * dirs[c2][j])
                + cfg.pref_noise * noise
        })
        .collect();

    let static_ids: Vec<usize> = cfg
        .static_cardinalities
        .iter()
        .map(|&card| rng.random_range(1..card.max(2)))
        .collect();

    // Initial history: noisy-top affinity items, newest first.
    let mut scored: Vec<(f64, usize)> = catalog
        .items
        .iter()
        .map(|it| {
            let noise: f64 = StandardNormal.sample(rng);
            let z = (it
                .features
                .iter()
                .zip(preference.iter())
                .map(|(e, u)| e * u)
                .sum::<f64>())
                / (cfg.d_item as f64).sqrt();
            (z + noise, it.item_id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut history: Vec<HistoryRecord> = scored
        .iter()
        .take(cfg.history_init)
        .map(|&(_, id)| {
            let it = catalog.item(id).unwrap();
            HistoryRecord {
                item_id: it.item_id,
                seller_id: it.seller_id,
                category_id: it.category_id,
            }
        })
        .collect();
    history.resize(cfg.k_history, HistoryRecord::PADDING);

    GroundTruthUser {
        state: UserState {
            static_ids,
            history,
        },
        preference,
    }
}

/// Exhaustively enumerate every page (ordered `page_k`-selections per
/// module, no within-module duplicates) and return the one maximizing
/// expected clicks for the given user. Exponential; tiny instances only.
pub fn enumerate_optimal_page(
    user: &GroundTruthUser,
    pools: &[ModulePool],
    catalog: &Catalog,
    page_k: usize,
) -> Result<(Page, f64)> {
    fn ordered_selections(ids: &[usize], k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let mut rest = ids.to_vec();
            rest.remove(i);
            for mut tail in ordered_selections(&rest, k - 1) {
                let mut sel = vec![id];
                sel.append(&mut tail);
                out.push(sel);
            }
        }
        out
    }

    let per_module: Vec<Vec<Vec<usize>>> = pools
        .iter()
        .map(|p| ordered_selections(&p.item_ids, page_k))
        .collect();
    let mut best: Option<(Page, f64)> = None;
    let mut stack = vec![0usize; pools.len()];
    loop {
        let page = Page {
            modules: stack
                .iter()
                .enumerate()
                .map(|(m, &i)| per_module[m][i].clone())
                .collect(),
        };
        let reward: f64 = click_probabilities(user, &page, catalog)?.iter().sum();
        if best.as_ref().map(|(_, r)| reward > *r).unwrap_or(true) {
            best = Some((page, reward));
        }
        // Odometer over module selections.
        let mut m = 0;
        loop {
            if m == pools.len() {
                return Ok(best.unwrap());
            }
            stack[m] += 1;
            if stack[m] < per_module[m].len() {
                break;
            }
            stack[m] = 0;
            m += 1;
        }
    }
}

/// Affinity scores of every pool item for a batch-of-one user, used by
/// the logged-data behavior policy.
pub fn behavior_scores(
    user: &GroundTruthUser,
    pool: &ModulePool,
    catalog: &Catalog,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = catalog.d_item() as f64;
    pool.item_ids
        .iter()
        .map(|&id| {
            let it = catalog.item(id)?;
            let z: f64 = it
                .features
                .iter()
                .zip(user.preference.iter())
                .map(|(e, u)| e * u)
                .sum::<f64>()
                / d.sqrt();
            let noise: f64 = StandardNormal.sample(rng);
            Ok(z + temperature * noise)
        })
        .collect()
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_env(seed: u64) -> Env {
        let mut cfg = EnvConfig::desk();
        cfg.catalog_size = 30;
        cfg.pool_size = 10;
        cfg.n_sellers = 5;
        cfg.k_history = 4;
        cfg.history_init = 2;
        Env::generate(cfg, seed).unwrap()
    }

    #[test]
    fn score_items_cases() {
        let items: Vec<Item> = (0..3)
            .map(|i| Item {
                item_id: i + 1,
                seller_id: 1,
                category_id: 1,
                features: vec![i as f64, 1.0, -1.0],
            })
            .collect();
        let refs: Vec<&Item> = items.iter().collect();
        let zero = score_items(&[0.0, 0.0, 0.0], &refs).unwrap();
        assert_eq!(zero, vec![0.0, 0.0, 0.0]);
        // Unit basis vector picks out one feature column.
        let e0 = score_items(&[1.0, 0.0, 0.0], &refs).unwrap();
        assert_eq!(e0, vec![0.0, 1.0, 2.0]);
        // Dimension mismatch.
        assert!(score_items(&[1.0], &refs).is_err());
        // Random action matches a naive dot-product oracle.
        let a = [0.3, -1.1, 0.7];
        let scores = score_items(&a, &refs).unwrap();
        for (s, it) in scores.iter().zip(items.iter()) {
            let oracle: f64 = (0..3).map(|j| a[j] * it.features[j]).sum();
            assert!((s - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_top_k_cases() {
        assert_eq!(rank_top_k(&[1.0, 3.0, 2.0], 2).unwrap(), vec![1, 2]);
        // All-equal scores: first k indices ascending.
        assert_eq!(rank_top_k(&[5.0; 4], 3).unwrap(), vec![0, 1, 2]);
        assert!(rank_top_k(&[1.0], 2).is_err());
        // Random scores match a full-sort oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores: Vec<f64> = (0..200).map(|_| rng.random_range(-5.0..5.0)).collect();
        let top = rank_top_k(&scores, 10).unwrap();
        let mut oracle: Vec<usize> = (0..200).collect();
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(top, oracle[..10].to_vec());
    }

    #[test]
    fn rank_top_k_positive_scaling_invariance() {
        let scores = [0.4, -0.2, 1.7, 0.4, 0.0];
        let scaled: Vec<f64> = scores.iter().map(|s| s * 3.7).collect();
        assert_eq!(
            rank_top_k(&scores, 3).unwrap(),
            rank_top_k(&scaled, 3).unwrap()
        );
    }

    fn flat_user(d: usize) -> GroundTruthUser {
        GroundTruthUser {
            state: UserState {
                static_ids: vec![1],
                history: vec![HistoryRecord::PADDING; 2],
            },
            preference: vec![0.0; d],
        }
    }

    fn cat_catalog(cats: &[usize]) -> Catalog {
        let items = cats
            .iter()
            .enumerate()
            .map(|(i, &c)| Item {
                item_id: i + 1,
                seller_id: 1,
                category_id: c,
                features: vec![0.0; 4],
            })
            .collect();
        Catalog::new(items, *cats.iter().max().unwrap()).unwrap()
    }

    #[test]
    fn click_probability_formula_arithmetic() {
        // u = 0 makes the base logistic exactly 0.5 everywhere.
        let catalog = cat_catalog(&[1, 2, 3, 4, 5, 6]);
        let user = flat_user(4);
        let page = Page {
            modules: vec![vec![1, 2, 3], vec![4, 5, 6]],
        };
        let p = click_probabilities(&user, &page, &catalog).unwrap();
        // Module-2 slot 3, unique category: 0.5 * 0.6 * 0.5 = 0.15.
        assert!((p[5] - 0.15).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[3] - 0.25).abs() < 1e-12);

        // Same category at module-1 slots 1 and 2: second gets rho once.
        let catalog = cat_catalog(&[1, 1, 2, 3, 4, 5]);
        let p = click_probabilities(&user, &page, &catalog).unwrap();
        assert!((p[1] - 0.5 * 0.8 * 1.0 * 0.3).abs() < 1e-12);
        assert!((p[1] - 0.12).abs() < 1e-12);

        // All six same category: the sixth accumulates rho^5.
        let catalog = cat_catalog(&[1, 1, 1, 1, 1, 1]);
        let p = click_probabilities(&user, &page, &catalog).unwrap();
        let expect = 0.5 * 0.6 * 0.5 * DUP_RHO.powi(5);
        assert!((p[5] - expect).abs() < 1e-15);
    }

    #[test]
    fn removing_duplicate_never_decreases_later_probabilities() {
        let user = flat_user(4);
        // Page A: slot-1 item shares category 1 with later items.
        let catalog = cat_catalog(&[1, 1, 1, 2, 1, 3]);
        let page = Page {
            modules: vec![vec![1, 2, 3], vec![4, 5, 6]],
        };
        let with_dup = click_probabilities(&user, &page, &catalog).unwrap();
        // Page B: replace the slot-1 item with a unique-category one.
        let catalog2 = cat_catalog(&[9, 1, 1, 2, 1, 3]);
        let without = click_probabilities(&user, &page, &catalog2).unwrap();
        for s in 1..6 {
            assert!(without[s] >= with_dup[s] - 1e-15);
        }
    }

    #[test]
    fn transition_update_rules() {
        let state = UserState {
            static_ids: vec![2],
            history: (1..=4)
                .map(|i| HistoryRecord {
                    item_id: i,
                    seller_id: 1,
                    category_id: 1,
                })
                .collect(),
        };
        // M = 0: unchanged.
        let same = transition_update(&state, &[]);
        assert_eq!(same, state);
        // M = 1: newest first, oldest removed.
        let y = HistoryRecord {
            item_id: 9,
            seller_id: 2,
            category_id: 2,
        };
        let one = transition_update(&state, &[y]);
        assert_eq!(one.history[0], y);
        assert_eq!(one.history[1].item_id, 1);
        assert_eq!(one.history.len(), 4);
        assert_eq!(one.history[3].item_id, 3);
        // M = 2, clicks y then z: final head is z.
        let z = HistoryRecord {
            item_id: 8,
            seller_id: 3,
            category_id: 3,
        };
        let two = transition_update(&state, &[y, z]);
        assert_eq!(two.history[0], z);
        assert_eq!(two.history[1], y);
        assert_eq!(two.history.len(), 4);
        assert_eq!(two.static_ids, state.static_ids);
    }

    #[test]
    fn env_step_click_scale_hooks() {
        let mut env = tiny_env(7);
        env.reset();
        let actions = vec![vec![0.1; 16], vec![-0.1; 16]];

        // Forced zero probabilities: no clicks, state unchanged.
        let before = env.state().clone();
        env.set_click_scale(0.0);
        let out = env.step(&actions).unwrap();
        assert_eq!(out.rewards, vec![0.0, 0.0]);
        assert_eq!(out.next_state, before);

        // Saturated probabilities: every shown item clicked.
        env.set_click_scale(1e12);
        let out = env.step(&actions).unwrap();
        assert_eq!(out.rewards, vec![3.0, 3.0]);
    }

    #[test]
    fn env_step_monte_carlo_matches_formula() {
        let mut env = tiny_env(8);
        env.reset();
        let actions = vec![vec![0.05; 16], vec![-0.05; 16]];
        let page = env.build_page(&actions).unwrap();
        let probs = env.page_click_probabilities(&page).unwrap();
        let n = 10_000;
        let mut counts = vec![0.0; probs.len()];
        for _ in 0..n {
            let out = env.step_with_page(&page).unwrap();
            let mut slot = 0;
            for module in &out.clicks {
                for &c in module {
                    if c {
                        counts[slot] += 1.0;
                    }
                    slot += 1;
                }
            }
        }
        for (slot, (&c, &p)) in counts.iter().zip(probs.iter()).enumerate() {
            let rate = c / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-4);
            assert!(
                (rate - p).abs() < 3.0 * se + 1e-9,
                "slot {slot}: rate {rate} vs p {p}"
            );
        }
    }

    #[test]
    fn env_is_reproducible_under_seed() {
        let run = |seed: u64| {
            let mut env = tiny_env(seed);
            env.reset();
            let mut out = Vec::new();
            for t in 0..5 {
                let a = vec![vec![0.1 * t as f64; 16], vec![-0.2; 16]];
                let o = env.step(&a).unwrap();
                out.push((o.rewards.clone(), o.next_state));
            }
            out
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn enumeration_prefers_category_diverse_pages() {
        // Four items, two categories, page_k = 1 per module: the optimal
        // page must not duplicate categories across modules.
        let mk = |id: usize, cat: usize, f: Vec<f64>| Item {
            item_id: id,
            seller_id: 1,
            category_id: cat,
            features: f,
        };
        let catalog = Catalog::new(
            vec![
                mk(1, 1, vec![3.0, 0.0, 0.0, 0.0]),
                mk(2, 1, vec![2.5, 0.0, 0.0, 0.0]),
                mk(3, 2, vec![1.2, 0.0, 0.0, 0.0]),
                mk(4, 2, vec![0.8, 0.0, 0.0, 0.0]),
            ],
            2,
        )
        .unwrap();
        let pool = ModulePool {
            module_id: 1,
            item_ids: vec![1, 2, 3, 4],
        };
        let pools = vec![
            pool.clone(),
            ModulePool {
                module_id: 2,
                ..pool
            },
        ];
        let user = GroundTruthUser {
            state: UserState {
                static_ids: vec![1],
                history: vec![HistoryRecord::PADDING; 2],
            },
            preference: vec![2.0, 0.0, 0.0, 0.0],
        };
        let (best, reward) = enumerate_optimal_page(&user, &pools, &catalog, 1).unwrap();
        let c1 = catalog.item(best.modules[0][0]).unwrap().category_id;
        let c2 = catalog.item(best.modules[1][0]).unwrap().category_id;
        assert_ne!(c1, c2, "optimal page duplicates a category: {best:?}");
        assert!(reward > 0.0);
    }
}
