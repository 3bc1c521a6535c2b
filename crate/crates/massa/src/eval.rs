//! Ranking metrics and the two evaluation procedures: offline log replay
//! and online (simulator or ground-truth) rollout.
//!
//! Metric definitions follow the training objective's conventions:
//! precision@K is the click fraction of the top K, and "nDCG" here is the
//! unnormalized discounted click gain `sum_k r_k / log2(1+k)` — note this
//! is DCG despite the conventional name; there is no ideal-DCG
//! normalization, and the log base is 2.

use ndarray::Array2;

use crate::agent::{ActMode, Agent};
use crate::embedding::UserState;
use crate::env::dataset::LoggedRecord;
use crate::env::{Catalog, Env, Item};
use crate::error::{Error, Result};
use crate::signal::SignalNet;

/// `#clicks in top-K / K`.
pub fn precision_at_k(clicks: &[u8], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::RejectedInput("precision_at_k with K = 0".into()));
    }
    if clicks.len() < k {
        return Err(Error::RejectedInput(format!(
            "precision_at_k: list of {} shorter than K = {k}",
            clicks.len()
        )));
    }
    let hits = clicks[..k].iter().filter(|&&c| c == 1).count();
    Ok(hits as f64 / k as f64)
}

/// Unnormalized discounted click gain `sum_{k=1..K} r_k / log2(1+k)`.
pub fn ndcg(clicks: &[u8], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::RejectedInput("ndcg with K = 0".into()));
    }
    if clicks.len() < k {
        return Err(Error::RejectedInput(format!(
            "ndcg: list of {} shorter than K = {k}",
            clicks.len()
        )));
    }
    Ok(clicks[..k]
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / ((i + 2) as f64).log2())
        .sum())
}

/// Per-module precision and nDCG at one cutoff; overall values are the
/// sum of the modules'.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub precision_per_module: Vec<f64>,
    pub ndcg_per_module: Vec<f64>,
    pub count: usize,
}

impl MetricReport {
    pub fn zeros(k: usize, n_modules: usize) -> Self {
        Self {
            k,
            precision_per_module: vec![0.0; n_modules],
            ndcg_per_module: vec![0.0; n_modules],
            count: 0,
        }
    }

    pub fn overall_precision(&self) -> f64 {
        self.precision_per_module.iter().sum()
    }

    pub fn overall_ndcg(&self) -> f64 {
        self.ndcg_per_module.iter().sum()
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "K={:<3} n={:<6}", self.k, self.count)?;
        for (m, (p, n)) in self
            .precision_per_module
            .iter()
            .zip(self.ndcg_per_module.iter())
            .enumerate()
        {
            write!(f, "  m{}: precision {:.4} ndcg {:.4}", m + 1, p, n)?;
        }
        write!(
            f,
            "  overall: precision {:.4} ndcg {:.4}",
            self.overall_precision(),
            self.overall_ndcg()
        )
    }
}

/// Offline replay output: metrics over the full 10-item module lists and
/// over the 3-item entrance-page slice, plus the skip count.
#[derive(Debug, Clone)]
pub struct OfflineReport {
    pub full_list: MetricReport,
    pub entrance: MetricReport,
    pub malformed_skipped: usize,
}

/// Re-rank one record's logged lists with an arbitrary ranker and score
/// the logged clicks wherever their items land. The ranker returns a
/// permutation of the candidate indices, best first.
pub fn offline_replay_with<F>(
    records: &[LoggedRecord],
    catalog: &Catalog,
    n_modules: usize,
    entrance_k: usize,
    mut rank: F,
) -> Result<OfflineReport>
where
    F: FnMut(usize, &UserState, &[&Item]) -> Result<Vec<usize>>,
{
    let mut full = MetricReport::zeros(crate::env::dataset::LOGGED_LIST_LEN, n_modules);
    let mut entrance = MetricReport::zeros(entrance_k, n_modules);
    let mut used = 0usize;
    for rec in records {
        if rec.validate(n_modules).is_err() {
            continue;
        }
        for (m, module) in rec.modules.iter().enumerate() {
            let items: Vec<&Item> = module
                .items
                .iter()
                .map(|&id| catalog.item(id))
                .collect::<Result<_>>()?;
            let order = rank(m, &rec.user, &items)?;
            if order.len() != items.len() {
                return Err(Error::RejectedInput(
                    "ranker returned a wrong-sized permutation".into(),
                ));
            }
            let reranked: Vec<u8> = order.iter().map(|&i| module.clicks[i]).collect();
            full.precision_per_module[m] += precision_at_k(&reranked, full.k)?;
            full.ndcg_per_module[m] += ndcg(&reranked, full.k)?;
            entrance.precision_per_module[m] += precision_at_k(&reranked, entrance.k)?;
            entrance.ndcg_per_module[m] += ndcg(&reranked, entrance.k)?;
        }
        used += 1;
    }
    for report in [&mut full, &mut entrance] {
        report.count = used;
        if used > 0 {
            for v in report
                .precision_per_module
                .iter_mut()
                .chain(report.ndcg_per_module.iter_mut())
            {
                *v /= used as f64;
            }
        }
    }
    Ok(OfflineReport {
        full_list: full,
        entrance,
        malformed_skipped: 0,
    })
}

/// Rank candidate indices by descending linear score, ties toward the
/// smaller item id.
pub fn rank_by_score(action: &[f64], items: &[&Item]) -> Result<Vec<usize>> {
    let scores = crate::env::score_items(action, items)?;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(items[a].item_id.cmp(&items[b].item_id))
    });
    Ok(idx)
}

/// The offline testing procedure: deterministic signals and actions,
/// each agent re-ranks its own logged 10-item candidate list, logged
/// clicks follow the items. The logged state is never mutated.
pub fn offline_replay(
    agents: &[Agent],
    signal: Option<&SignalNet>,
    records: &[LoggedRecord],
    catalog: &Catalog,
    entrance_k: usize,
) -> Result<OfflineReport> {
    let n_modules = agents.len();
    let d_sig = agents[0].actor.extra_dim();
    offline_replay_with(records, catalog, n_modules, entrance_k, |m, user, items| {
        let phi = match signal {
            Some(sig) => sig.sample(user, ActMode::Deterministic, None)?,
            None => vec![vec![0.0; d_sig]; n_modules],
        };
        let action = agents[m].act(user, &phi[m], ActMode::Deterministic, None)?;
        rank_by_score(&action, items)
    })
}

/// Online rollout output.
#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub metrics: MetricReport,
    pub mean_episode_reward: f64,
    pub mean_reward_per_module: Vec<f64>,
    pub episodes: usize,
}

/// Roll deterministic-mode policies in the environment for `episodes`
/// episodes; clicks come from the environment's configured click model.
pub fn online_eval(
    agents: &[Agent],
    signal: Option<&SignalNet>,
    env: &mut Env,
    episodes: usize,
) -> Result<OnlineReport> {
    let n_modules = agents.len();
    let k = env.cfg.page_k;
    let d_sig = agents[0].actor.extra_dim();
    let mut metrics = MetricReport::zeros(k, n_modules);
    let mut pages = 0usize;
    let mut total_reward = 0.0;
    let mut reward_per_module = vec![0.0; n_modules];
    for _ in 0..episodes {
        let mut state = env.reset();
        loop {
            let phi = match signal {
                Some(sig) => sig.sample(&state, ActMode::Deterministic, None)?,
                None => vec![vec![0.0; d_sig]; n_modules],
            };
            let actions: Vec<Vec<f64>> = agents
                .iter()
                .enumerate()
                .map(|(m, a)| a.act(&state, &phi[m], ActMode::Deterministic, None))
                .collect::<Result<_>>()?;
            let out = env.step(&actions)?;
            for (m, module_clicks) in out.clicks.iter().enumerate() {
                let clicks: Vec<u8> = module_clicks.iter().map(|&c| c as u8).collect();
                metrics.precision_per_module[m] += precision_at_k(&clicks, k)?;
                metrics.ndcg_per_module[m] += ndcg(&clicks, k)?;
                reward_per_module[m] += out.rewards[m];
                total_reward += out.rewards[m];
            }
            pages += 1;
            state = out.next_state;
            if out.done {
                break;
            }
        }
    }
    metrics.count = pages;
    if pages > 0 {
        for v in metrics
            .precision_per_module
            .iter_mut()
            .chain(metrics.ndcg_per_module.iter_mut())
        {
            *v /= pages as f64;
        }
    }
    let ep = episodes.max(1) as f64;
    Ok(OnlineReport {
        metrics,
        mean_episode_reward: if episodes == 0 { 0.0 } else { total_reward / ep },
        mean_reward_per_module: reward_per_module
            .into_iter()
            .map(|r| if episodes == 0 { 0.0 } else { r / ep })
            .collect(),
        episodes,
    })
}

/// Roll the per-user enumerated-optimal fixed page: for every episode's
/// user, exhaustively find the expected-click-maximizing page and show it
/// at every round. Click probabilities depend only on the hidden
/// preference and the page, so this upper-bounds any state-feedback
/// policy's expected reward. Exponential in page size; tiny setups only.
pub fn online_eval_oracle(env: &mut Env, episodes: usize) -> Result<OnlineReport> {
    let n_modules = env.cfg.n_modules;
    let k = env.cfg.page_k;
    let mut metrics = MetricReport::zeros(k, n_modules);
    let mut pages = 0usize;
    let mut total_reward = 0.0;
    let mut reward_per_module = vec![0.0; n_modules];
    for _ in 0..episodes {
        env.reset();
        let (page, _) = crate::env::enumerate_optimal_page(
            env.current_user(),
            &env.pools,
            &env.catalog,
            k,
        )?;
        loop {
            let out = env.step_with_page(&page)?;
            for (m, module_clicks) in out.clicks.iter().enumerate() {
                let clicks: Vec<u8> = module_clicks.iter().map(|&c| c as u8).collect();
                metrics.precision_per_module[m] += precision_at_k(&clicks, k)?;
                metrics.ndcg_per_module[m] += ndcg(&clicks, k)?;
                reward_per_module[m] += out.rewards[m];
                total_reward += out.rewards[m];
            }
            pages += 1;
            if out.done {
                break;
            }
        }
    }
    metrics.count = pages;
    if pages > 0 {
        for v in metrics
            .precision_per_module
            .iter_mut()
            .chain(metrics.ndcg_per_module.iter_mut())
        {
            *v /= pages as f64;
        }
    }
    let ep = episodes.max(1) as f64;
    Ok(OnlineReport {
        metrics,
        mean_episode_reward: if episodes == 0 { 0.0 } else { total_reward / ep },
        mean_reward_per_module: reward_per_module
            .into_iter()
            .map(|r| if episodes == 0 { 0.0 } else { r / ep })
            .collect(),
        episodes,
    })
}

/// Mean per-step expected reward of a batch of actions, used by tests.
pub fn expected_action_reward(env: &Env, actions: &[Vec<f64>]) -> Result<f64> {
    let page = env.build_page(actions)?;
    env.expected_page_reward(&page)
}

/// Zero signal matrix helper for no-signal policies.
pub fn zero_phi(b: usize, d_sig: usize) -> Array2<f64> {
    Array2::zeros((b, d_sig))
}
