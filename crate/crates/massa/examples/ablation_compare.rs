//! Trains the full method against its two ablations on the same
//! environment seeds and prints the evaluation-reward curves:
//!
//! - full: signal network with entropy weight alpha
//! - no-entropy: signal network with alpha = 0
//! - no-signal: independent soft actor-critics (zero signal inputs)
//!
//! ```bash
//! cargo run --release --example ablation_compare [steps] [seeds]
//! ```

use massa::env::{Env, EnvConfig};
use massa::trainer::{run_training, Trainer, TrainerConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);

    let env_cfg = EnvConfig::desk();
    let variants: [(&str, Box<dyn Fn(&mut TrainerConfig)>); 3] = [
        ("massa", Box::new(|_c: &mut TrainerConfig| {})),
        ("no-entropy", Box::new(|c: &mut TrainerConfig| c.alpha = 0.0)),
        ("no-signal", Box::new(|c: &mut TrainerConfig| c.no_signal = true)),
    ];

    let out_root = std::env::temp_dir().join("massa_ablation");
    for (name, tweak) in &variants {
        for seed in 0..n_seeds {
            let mut cfg = TrainerConfig::desk();
            cfg.total_steps = steps;
            cfg.seed = seed;
            tweak(&mut cfg);
            let mut env = Env::generate(env_cfg.clone(), seed).unwrap();
            let mut trainer = Trainer::new(cfg, &env_cfg).unwrap();
            let t0 = std::time::Instant::now();
            let out = out_root.join(format!("{name}_{seed}"));
            let summary =
                run_training(&mut trainer, &mut env, &out, &format!("variant = {name}"))
                    .unwrap();
            let final_reward = summary
                .final_eval
                .as_ref()
                .map(|r| r.mean_episode_reward)
                .unwrap_or(f64::NAN);
            println!(
                "{name} seed {seed}: final eval reward {final_reward:.3} ({:.1?})",
                t0.elapsed()
            );
            // Reward trajectory from the CSV.
            let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
            let rewards: Vec<String> = text
                .lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
                .map(|l| {
                    let mut it = l.split(',');
                    let step = it.next().unwrap_or("?");
                    let r = it.next().unwrap_or("?");
                    format!("{step}:{}", &r[..r.len().min(5)])
                })
                .collect();
            println!("  curve: {}", rewards.join(" "));
        }
    }
}
