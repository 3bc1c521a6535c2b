//! Environment calibration probe: click-model sharpness, logged-label
//! positivity, oracle click-prediction accuracy, and the reward headroom
//! between naive and category-diverse page strategies.
//!
//! ```bash
//! cargo run --release --example env_probe
//! ```

use massa::env::dataset::{generate_dataset, label_positivity, DataGenConfig};
use massa::env::{
    base_affinity, click_probabilities, position_bias, Env, EnvConfig, Page, DUP_RHO,
};

fn main() {
    let env_cfg = EnvConfig::desk();
    let gen = DataGenConfig {
        n_users: 100,
        n_records: 3000,
        env: env_cfg.clone(),
    };
    let ds = generate_dataset(&gen, 42).unwrap();
    println!("positivity: {:.4}", label_positivity(&ds.records));

    // Oracle accuracy: with the true slot probabilities known, the best
    // binary predictor scores mean max(p, 1-p) on the 6 entrance slots.
    // Recompute p for each logged record's first 3 items per module.
    let mut acc = 0.0;
    let mut slots = 0usize;
    let mut p_hist = [0usize; 10];
    // Rebuild users deterministically the way the generator did: we can't,
    // so approximate with fresh users served the behavior policy's lists.
    let mut env = Env::generate(env_cfg.clone(), 7).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    for _ in 0..2000 {
        env.reset();
        let user = env.current_user().clone();
        let mut lists = Vec::new();
        for pool in &env.pools {
            let scores = massa::env::behavior_scores(
                &user,
                pool,
                &env.catalog,
                env_cfg.behavior_temperature,
                &mut rng,
            )
            .unwrap();
            let top = massa::env::rank_top_k(&scores, 3).unwrap();
            lists.push(
                top.into_iter()
                    .map(|i| pool.item_ids[i])
                    .collect::<Vec<_>>(),
            );
        }
        let page = Page { modules: lists };
        let probs = click_probabilities(&user, &page, &env.catalog).unwrap();
        for p in probs {
            acc += p.max(1.0 - p);
            p_hist[((p * 10.0) as usize).min(9)] += 1;
            slots += 1;
        }
    }
    println!("oracle accuracy on behavior pages: {:.4}", acc / slots as f64);
    println!("slot probability histogram (0.1 bins): {p_hist:?}");

    // Affinity sharpness: distribution of base affinities over pool items
    // for a few users.
    let mut murky = 0usize;
    let mut high = 0usize;
    let mut total = 0usize;
    for _ in 0..50 {
        env.reset();
        let user = env.current_user().clone();
        for &id in &env.pools[0].item_ids {
            let b = base_affinity(&user.preference, env.catalog.item(id).unwrap());
            if b > 0.88 {
                high += 1;
            } else if b > 0.12 {
                murky += 1;
            }
            total += 1;
        }
    }
    println!(
        "pool affinities: high {:.3}, murky {:.3}, low {:.3}",
        high as f64 / total as f64,
        murky as f64 / total as f64,
        1.0 - (high + murky) as f64 / total as f64
    );

    // Reward headroom: expected page reward when module 2 copies module
    // 1's category vs picking its best distinct-category items.
    let mut copy_r = 0.0;
    let mut diverse_r = 0.0;
    let mut best_single = 0.0;
    for _ in 0..200 {
        env.reset();
        let user = env.current_user().clone();
        let pool = &env.pools[0];
        // Rank by true affinity.
        let mut scored: Vec<(f64, usize)> = pool
            .item_ids
            .iter()
            .map(|&id| {
                let it = env.catalog.item(id).unwrap();
                (base_affinity(&user.preference, it), id)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let top3: Vec<usize> = scored.iter().take(3).map(|s| s.1).collect();
        // Copying page: both modules show the user's top-3.
        let copy_page = Page {
            modules: vec![top3.clone(), top3.clone()],
        };
        copy_r += env.expected_page_reward(&copy_page).unwrap();
        // Diverse page: module 2 takes the best items whose categories
        // avoid module 1's.
        let used: Vec<usize> = top3
            .iter()
            .map(|&id| env.catalog.item(id).unwrap().category_id)
            .collect();
        let mut alt = Vec::new();
        let mut alt_cats = used.clone();
        for &(_, id) in &scored {
            let c = env.catalog.item(id).unwrap().category_id;
            if !alt_cats.contains(&c) {
                alt.push(id);
                alt_cats.push(c);
                if alt.len() == 3 {
                    break;
                }
            }
        }
        if alt.len() == 3 {
            let div_page = Page {
                modules: vec![top3.clone(), alt],
            };
            diverse_r += env.expected_page_reward(&div_page).unwrap();
        }
        best_single += scored[0].0 * position_bias(0);
    }
    println!(
        "expected page reward: copy {:.3}, diverse {:.3} (dup punishment rho = {DUP_RHO})",
        copy_r / 200.0,
        diverse_r / 200.0
    );
    println!("mean best-item affinity: {:.3}", best_single / 200.0);
}
