//! Measures rollout + train-step throughput at desk scale.
//!
//! ```bash
//! cargo run --release --example bench_step
//! ```

use std::time::Instant;

use massa::env::{Env, EnvConfig};
use massa::trainer::{Trainer, TrainerConfig};

fn main() {
    let env_cfg = EnvConfig::desk();
    let mut cfg = TrainerConfig::desk();
    cfg.seed = 1;
    cfg.warmup = 64;
    let mut env = Env::generate(env_cfg.clone(), 1).unwrap();
    let mut trainer = Trainer::new(cfg, &env_cfg).unwrap();

    env.reset();
    for _ in 0..64 {
        trainer.rollout_step(&mut env).unwrap();
    }

    let t0 = Instant::now();
    let n_roll = 2000;
    for _ in 0..n_roll {
        trainer.rollout_step(&mut env).unwrap();
    }
    let roll = t0.elapsed();
    println!(
        "rollout: {:.3} ms/step ({} steps in {:.2?})",
        roll.as_secs_f64() * 1e3 / n_roll as f64,
        n_roll,
        roll
    );

    let t0 = Instant::now();
    let n_train = 300;
    for _ in 0..n_train {
        trainer.train_step().unwrap();
    }
    let train = t0.elapsed();
    let per = train.as_secs_f64() * 1e3 / n_train as f64;
    println!(
        "train: {:.3} ms/step ({} steps in {:.2?})",
        per,
        n_train,
        train
    );
    let combined = per + roll.as_secs_f64() * 1e3 / n_roll as f64;
    println!(
        "50k combined steps would take ~{:.1} min",
        combined * 50_000.0 / 60_000.0
    );
}
