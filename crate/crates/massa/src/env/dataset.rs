//! Logged-dataset generation and the JSON-lines file formats.
//!
//! Catalog file: one item per line,
//! `{"item_id":1,"seller_id":3,"category_id":2,"features":[...]}`.
//!
//! Records file: one interaction per line,
//! `{"user":{"static":[...],"history":[{"item_id":..,"seller_id":..,"category_id":..},...]},`
//! `"modules":[{"module_id":1,"items":[10 ids],"clicks":[10 zeros/ones]},...],`
//! `"post_state":{...}}`.
//!
//! Both files are deterministic byte-for-byte under a fixed seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    base_affinity, behavior_scores, generate_catalog, generate_pools, module_factor,
    position_bias, rank_top_k, sample_user, transition_update, Catalog, EnvConfig, GroundTruthUser,
    Item, ModulePool, DUP_RHO,
};
use crate::embedding::{HistoryRecord, UserState};
use crate::error::{Error, Result};

/// Items logged per module in each record.
pub const LOGGED_LIST_LEN: usize = 10;

/// One module's logged list: ten recommended item ids in rank order and
/// their binary click labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleLog {
    pub module_id: usize,
    pub items: Vec<usize>,
    pub clicks: Vec<u8>,
}

/// One offline interaction record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub user: UserState,
    pub modules: Vec<ModuleLog>,
    pub post_state: UserState,
}

impl LoggedRecord {
    pub fn validate(&self, n_modules: usize) -> Result<()> {
        if self.modules.len() != n_modules {
            return Err(Error::RejectedInput(format!(
                "record has {} modules, expected {n_modules}",
                self.modules.len()
            )));
        }
        for m in &self.modules {
            if m.items.len() != LOGGED_LIST_LEN || m.clicks.len() != LOGGED_LIST_LEN {
                return Err(Error::RejectedInput(format!(
                    "module {} log must hold exactly {LOGGED_LIST_LEN} items and clicks",
                    m.module_id
                )));
            }
            if m.clicks.iter().any(|&c| c > 1) {
                return Err(Error::RejectedInput("click labels must be 0/1".into()));
            }
        }
        Ok(())
    }
}

/// Dataset generation counts on top of the environment shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub n_users: usize,
    pub n_records: usize,
    pub env: EnvConfig,
}

impl DataGenConfig {
    pub fn desk() -> Self {
        Self {
            n_users: 200,
            n_records: 20_000,
            env: EnvConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.n_users == 0 && self.n_records > 0 {
            return Err(Error::Config("n_users must be positive".into()));
        }
        Ok(())
    }
}

/// Click probabilities for a full logged page (two 10-deep lists) under
/// the ground-truth model, scanning module by module, rank by rank.
fn logged_page_click_probs(
    user: &GroundTruthUser,
    lists: &[Vec<usize>],
    catalog: &Catalog,
) -> Result<Vec<f64>> {
    let mut probs = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    for (m, items) in lists.iter().enumerate() {
        for (rank, &id) in items.iter().enumerate() {
            let item: &Item = catalog.item(id)?;
            let dup = seen.iter().filter(|&&c| c == item.category_id).count();
            let p = base_affinity(&user.preference, item)
                * position_bias(rank)
                * module_factor(m)
                * DUP_RHO.powi(dup as i32);
            probs.push(p.clamp(0.0, 1.0));
            seen.push(item.category_id);
        }
    }
    Ok(probs)
}

/// Generated dataset, in memory.
pub struct Dataset {
    pub catalog: Catalog,
    pub pools: Vec<ModulePool>,
    pub records: Vec<LoggedRecord>,
}

/// Generate users and logged interactions with a noisy-greedy behavior
/// policy over the hidden preferences. Records cycle round-robin over the
/// user population; each user's state evolves with their clicks.
pub fn generate_dataset(cfg: &DataGenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog = generate_catalog(&cfg.env, &mut rng);
    let pools = generate_pools(&cfg.env, &mut rng);
    let mut users: Vec<GroundTruthUser> = (0..cfg.n_users)
        .map(|_| sample_user(&catalog, &cfg.env, &mut rng))
        .collect();

    let mut records = Vec::with_capacity(cfg.n_records);
    for r in 0..cfg.n_records {
        let user_idx = r % users.len().max(1);
        let user = &mut users[user_idx];
        let pre_state = user.state.clone();

        // Behavior policy: rank each pool by noisy affinity, log top-10.
        let mut lists = Vec::with_capacity(pools.len());
        for pool in &pools {
            let scores = behavior_scores(
                user,
                pool,
                &catalog,
                cfg.env.behavior_temperature,
                &mut rng,
            )?;
            let k = LOGGED_LIST_LEN.min(pool.item_ids.len());
            let top = rank_top_k(&scores, k)?;
            let mut items: Vec<usize> = top.into_iter().map(|i| pool.item_ids[i]).collect();
            // Short pools (tiny test setups) pad by repeating the last id
            // never happens at desk scale; keep lists exactly 10 long.
            while items.len() < LOGGED_LIST_LEN {
                items.push(*items.last().unwrap());
            }
            lists.push(items);
        }

        let probs = logged_page_click_probs(user, &lists, &catalog)?;
        let mut modules = Vec::with_capacity(lists.len());
        let mut clicked_records = Vec::new();
        let mut slot = 0;
        for (m, items) in lists.iter().enumerate() {
            let mut clicks = Vec::with_capacity(items.len());
            for &id in items {
                let clicked = rng.random::<f64>() < probs[slot];
                clicks.push(clicked as u8);
                if clicked {
                    let it = catalog.item(id)?;
                    clicked_records.push(HistoryRecord {
                        item_id: it.item_id,
                        seller_id: it.seller_id,
                        category_id: it.category_id,
                    });
                }
                slot += 1;
            }
            modules.push(ModuleLog {
                module_id: m + 1,
                items: items.clone(),
                clicks,
            });
        }
        let post_state = transition_update(&pre_state, &clicked_records);
        user.state = post_state.clone();
        records.push(LoggedRecord {
            user: pre_state,
            modules,
            post_state,
        });
    }
    Ok(Dataset {
        catalog,
        pools,
        records,
    })
}

/// Fraction of positive click labels across all logged positions.
pub fn label_positivity(records: &[LoggedRecord]) -> f64 {
    let mut pos = 0usize;
    let mut total = 0usize;
    for r in records {
        for m in &r.modules {
            pos += m.clicks.iter().filter(|&&c| c == 1).count();
            total += m.clicks.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        pos as f64 / total as f64
    }
}

pub fn write_catalog(catalog: &Catalog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in &catalog.items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a catalog file; the category count is the largest id present.
pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let r = BufReader::new(File::open(path)?);
    let mut items: Vec<Item> = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str::<Item>(&line)?);
    }
    let n_categories = items.iter().map(|i| i.category_id).max().unwrap_or(0);
    Catalog::new(items, n_categories)
}

pub fn write_records(records: &[LoggedRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Strict reader: any malformed line is an error.
pub fn read_records(path: &Path) -> Result<Vec<LoggedRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str::<LoggedRecord>(&line)?);
    }
    Ok(out)
}

/// Tolerant reader for replay evaluation: skips malformed lines, counts
/// them, and aborts when more than `limit_percent` of lines are bad.
pub fn read_records_tolerant(
    path: &Path,
    n_modules: usize,
    limit_percent: usize,
) -> Result<(Vec<LoggedRecord>, usize)> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<LoggedRecord>(&line) {
            Ok(rec) if rec.validate(n_modules).is_ok() => out.push(rec),
            _ => {
                malformed += 1;
                log::warn!("skipping malformed record at line {total}");
            }
        }
    }
    if total > 0 && malformed * 100 > total * limit_percent {
        return Err(Error::TooManyMalformed {
            malformed,
            total,
            limit_percent,
        });
    }
    Ok((out, malformed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_gen() -> DataGenConfig {
        let mut env = EnvConfig::desk();
        env.catalog_size = 60;
        env.pool_size = 30;
        env.n_sellers = 8;
        env.k_history = 5;
        env.history_init = 3;
        DataGenConfig {
            n_users: 10,
            n_records: 50,
            env,
        }
    }

    #[test]
    fn zero_records_still_yields_valid_catalog() {
        let mut cfg = tiny_gen();
        cfg.n_records = 0;
        let ds = generate_dataset(&cfg, 1).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.catalog.len(), 60);
    }

    #[test]
    fn fixed_seed_runs_are_byte_identical() {
        let cfg = tiny_gen();
        let dir = tempfile::tempdir().unwrap();
        let paths = |tag: &str| {
            (
                dir.path().join(format!("catalog_{tag}.jsonl")),
                dir.path().join(format!("records_{tag}.jsonl")),
            )
        };
        for tag in ["a", "b"] {
            let ds = generate_dataset(&cfg, 99).unwrap();
            let (cp, rp) = paths(tag);
            write_catalog(&ds.catalog, &cp).unwrap();
            write_records(&ds.records, &rp).unwrap();
        }
        let (ca, ra) = paths("a");
        let (cb, rb) = paths("b");
        assert_eq!(std::fs::read(ca).unwrap(), std::fs::read(cb).unwrap());
        assert_eq!(std::fs::read(ra).unwrap(), std::fs::read(rb).unwrap());
    }

    #[test]
    fn label_positivity_within_sane_band() {
        let cfg = DataGenConfig {
            n_users: 40,
            n_records: 400,
            ..tiny_gen()
        };
        let ds = generate_dataset(&cfg, 7).unwrap();
        let pos = label_positivity(&ds.records);
        assert!(pos > 0.01 && pos < 0.60, "positivity {pos}");
    }

    #[test]
    fn records_roundtrip_and_tolerant_reader() {
        let cfg = tiny_gen();
        let ds = generate_dataset(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&ds.records, &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, ds.records);

        // Corrupt a few lines; the tolerant reader skips them.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{ not json }\n");
        std::fs::write(&path, text).unwrap();
        let (recs, malformed) = read_records_tolerant(&path, 2, 10).unwrap();
        assert_eq!(recs.len(), ds.records.len());
        assert_eq!(malformed, 1);

        // Past the limit the reader aborts.
        let garbage: String = (0..60).map(|_| "oops\n").collect();
        std::fs::write(&path, garbage).unwrap();
        assert!(matches!(
            read_records_tolerant(&path, 2, 10),
            Err(Error::TooManyMalformed { .. })
        ));
    }

    #[test]
    fn every_record_has_ten_items_and_labels_per_module() {
        let cfg = tiny_gen();
        let ds = generate_dataset(&cfg, 5).unwrap();
        for r in &ds.records {
            r.validate(cfg.env.n_modules).unwrap();
            // Post state follows the stated click-order update rule.
            let mut clicked = Vec::new();
            for m in &r.modules {
                for (&id, &c) in m.items.iter().zip(m.clicks.iter()) {
                    if c == 1 {
                        let it = ds.catalog.item(id).unwrap();
                        clicked.push(HistoryRecord {
                            item_id: it.item_id,
                            seller_id: it.seller_id,
                            category_id: it.category_id,
                        });
                    }
                }
            }
            assert_eq!(transition_update(&r.user, &clicked), r.post_state);
        }
    }
}
