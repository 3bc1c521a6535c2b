//! Generates a synthetic logged dataset and trains the page-level CTR
//! simulator on it, reporting held-out binary click accuracy.
//!
//! ```bash
//! cargo run --release --example train_click_simulator
//! ```

use massa::env::dataset::{generate_dataset, label_positivity, DataGenConfig};
use massa::env::simulator::{train_ctr_simulator, SimulatorConfig};
use massa::embedding::{EmbeddingConfig, PoolingMode};

fn main() {
    let gen = DataGenConfig::desk();
    println!(
        "generating {} records over {} users...",
        gen.n_records, gen.n_users
    );
    let ds = generate_dataset(&gen, 42).unwrap();
    println!("label positivity: {:.4}", label_positivity(&ds.records));

    let env = &gen.env;
    let cfg = SimulatorConfig {
        user_embedding: EmbeddingConfig {
            static_cardinalities: env.static_cardinalities.clone(),
            static_dim: 8,
            item_cardinality: env.catalog_size + 1,
            seller_cardinality: env.n_sellers + 1,
            category_cardinality: env.n_categories + 1,
            seq_dim: 8,
            history_len: env.k_history,
            attention_hidden: vec![32, 32],
            mode: PoolingMode::Attention,
        },
        item_cardinality: env.catalog_size + 1,
        item_embed_dim: 8,
        hidden: vec![64, 64, 64],
        n_modules: env.n_modules,
        slots_per_module: 3,
    };

    let t0 = std::time::Instant::now();
    let (sim, report) = train_ctr_simulator(&ds.records, cfg, 4, 64, 0.01, 7).unwrap();
    println!(
        "trained on {} records, held out {}, in {:.1?}",
        report.n_train,
        report.n_heldout,
        t0.elapsed()
    );
    println!("final train BCE: {:.4}", report.final_train_loss);
    println!("held-out accuracy: {:.4}", report.heldout_accuracy);

    // Show a few predictions next to the logged labels.
    for rec in ds.records.iter().rev().take(3) {
        let mut items = Vec::new();
        let mut labels = Vec::new();
        for m in &rec.modules {
            items.extend_from_slice(&m.items[..3]);
            labels.extend_from_slice(&m.clicks[..3]);
        }
        let probs = sim.predict(&rec.user, &items).unwrap();
        let probs: Vec<String> = probs.iter().map(|p| format!("{p:.2}")).collect();
        println!("labels {labels:?} vs predicted [{}]", probs.join(", "));
    }
}
