//! Batch CLI over the library: data generation, simulator training,
//! policy training with ablations, offline/online evaluation, and
//! gradient checks.
//!
//! Exit codes: 0 ok, 2 config/input error, 3 training divergence,
//! 4 gradient-check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use massa::checkpoint;
use massa::config::{load_config, Preset, RunConfig};
use massa::embedding::{EmbeddingConfig, PoolingMode};
use massa::env::dataset::{
    generate_dataset, label_positivity, read_catalog, read_records_tolerant, write_catalog,
    write_records,
};
use massa::env::simulator::{train_ctr_simulator, SimulatorConfig};
use massa::env::{ClickModel, Env};
use massa::error::Error;
use massa::eval::{offline_replay, online_eval};
use massa::trainer::{run_training, Trainer};
use massa::verify::{run_gradcheck, GRADCHECK_TOLERANCE};

#[derive(Parser)]
#[command(
    name = "massa",
    about = "Multi-agent soft signal-actor training lab",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// TOML config file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: `desk` (minutes-scale) or `paper` (full-scale dims).
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Master seed (environment, networks, sampling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog and logged-interaction records.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory for catalog.jsonl and records.jsonl.
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        /// Override the number of records.
        #[arg(long)]
        records: Option<usize>,
        /// Override the number of users.
        #[arg(long)]
        users: Option<usize>,
    },
    /// Train the multi-agent policy (optionally ablated).
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory for metrics.csv and checkpoint.bin.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Override total environment/training steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Signal entropy coefficient (0 reproduces the no-entropy
        /// ablation).
        #[arg(long)]
        alpha: Option<f64>,
        /// Actor entropy coefficient.
        #[arg(long)]
        beta: Option<f64>,
        /// Remove the signal network (independent soft actor-critics).
        #[arg(long)]
        no_signal: bool,
        /// Replace attention pooling with flat concatenation.
        #[arg(long)]
        no_attention: bool,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Train the page-level CTR simulator from logged records.
    TrainSim {
        #[command(flatten)]
        common: CommonOpts,
        /// Records file (defaults to paths.records or data/records.jsonl).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long, default_value = "runs/simulator.bin")]
        out: PathBuf,
        /// Training epochs.
        #[arg(long, default_value_t = 4)]
        epochs: usize,
    },
    /// Offline log replay: re-rank logged candidates, score logged clicks.
    EvalOffline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records file.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Catalog file (defaults to paths.catalog or data/catalog.jsonl).
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Evaluate at most this many records.
        #[arg(long)]
        limit: Option<usize>,
        /// Where to append CSV rows of the report.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Online rollout evaluation in the synthetic environment.
    EvalOnline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Click source: `ground-truth` or `simulator`.
        #[arg(long, default_value = "ground-truth")]
        click_model: String,
        /// Simulator checkpoint (required with --click-model simulator).
        #[arg(long)]
        sim_checkpoint: Option<PathBuf>,
        /// Environment generation seed (must match training; defaults to
        /// --seed).
        #[arg(long)]
        env_seed: Option<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonOpts,
        /// Negative-control hook: corrupt the analytic gradients and
        /// expect failure.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MASSA_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Divergence(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn resolve(common: &CommonOpts) -> Result<RunConfig, Error> {
    let preset: Preset = common.preset.parse()?;
    let mut cfg = load_config(preset, common.config.as_deref())?;
    cfg.trainer.seed = common.seed;
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig) {
    println!("# effective configuration");
    for line in cfg.echo().lines() {
        println!("# {line}");
    }
}

fn simulator_config(cfg: &RunConfig) -> SimulatorConfig {
    let env = &cfg.env;
    SimulatorConfig {
        user_embedding: EmbeddingConfig {
            static_cardinalities: env.static_cardinalities.clone(),
            static_dim: cfg.trainer.static_dim,
            item_cardinality: env.catalog_size + 1,
            seller_cardinality: env.n_sellers + 1,
            category_cardinality: env.n_categories + 1,
            seq_dim: cfg.trainer.seq_dim,
            history_len: env.k_history,
            attention_hidden: cfg.trainer.attention_hidden.clone(),
            mode: PoolingMode::Attention,
        },
        item_cardinality: env.catalog_size + 1,
        item_embed_dim: 8,
        hidden: vec![64, 64, 64],
        n_modules: env.n_modules,
        slots_per_module: 3,
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::GenData {
            common,
            out_dir,
            records,
            users,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(r) = records {
                cfg.data.n_records = r;
            }
            if let Some(u) = users {
                cfg.data.n_users = u;
            }
            cfg.validate()?;
            echo_config(&cfg);
            std::fs::create_dir_all(&out_dir)?;
            let ds = generate_dataset(&cfg.data_gen(), common.seed)?;
            let catalog_path = out_dir.join("catalog.jsonl");
            let records_path = out_dir.join("records.jsonl");
            write_catalog(&ds.catalog, &catalog_path)?;
            write_records(&ds.records, &records_path)?;
            println!(
                "wrote {} items to {} and {} records to {} (positivity {:.4})",
                ds.catalog.len(),
                catalog_path.display(),
                ds.records.len(),
                records_path.display(),
                label_positivity(&ds.records)
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Train {
            common,
            out,
            steps,
            alpha,
            beta,
            no_signal,
            no_attention,
            batch_size,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(s) = steps {
                cfg.trainer.total_steps = s;
            }
            if let Some(a) = alpha {
                cfg.trainer.alpha = a;
            }
            if let Some(b) = beta {
                cfg.trainer.beta = b;
            }
            if let Some(b) = batch_size {
                cfg.trainer.batch_size = b;
            }
            cfg.trainer.no_signal |= no_signal;
            cfg.trainer.no_attention |= no_attention;
            cfg.validate()?;
            echo_config(&cfg);
            let mut env = Env::generate(cfg.env.clone(), common.seed)?;
            let mut trainer = Trainer::new(cfg.trainer.clone(), &cfg.env)?;
            let summary = run_training(&mut trainer, &mut env, &out, &cfg.echo())?;
            println!(
                "finished {} steps; metrics at {}, checkpoint at {}",
                summary.steps,
                summary.metrics_path.display(),
                summary.checkpoint_path.display()
            );
            if let Some(report) = &summary.final_eval {
                println!(
                    "final eval: reward {:.3}, {}",
                    report.mean_episode_reward, report.metrics
                );
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::TrainSim {
            common,
            records,
            out,
            epochs,
        } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            echo_config(&cfg);
            let records_path = records
                .or(cfg.paths.records.clone())
                .unwrap_or_else(|| PathBuf::from("data/records.jsonl"));
            let (recs, skipped) = read_records_tolerant(&records_path, cfg.env.n_modules, 10)?;
            if skipped > 0 {
                println!("skipped {skipped} malformed records");
            }
            let (sim, report) = train_ctr_simulator(
                &recs,
                simulator_config(&cfg),
                epochs,
                64,
                cfg.trainer.learning_rate,
                common.seed,
            )?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            checkpoint::save_simulator(&out, &sim)?;
            println!(
                "trained on {} records ({} held out): held-out accuracy {:.4}; saved to {}",
                report.n_train,
                report.n_heldout,
                report.heldout_accuracy,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::EvalOffline {
            common,
            checkpoint: ckpt,
            records,
            catalog,
            limit,
            csv,
        } => {
            let cfg = resolve(&common)?;
            echo_config(&cfg);
            let records_path = records
                .or(cfg.paths.records.clone())
                .unwrap_or_else(|| PathBuf::from("data/records.jsonl"));
            let catalog_path = catalog
                .or(cfg.paths.catalog.clone())
                .unwrap_or_else(|| PathBuf::from("data/catalog.jsonl"));
            let (model, agents, signal) = checkpoint::load_policy(&ckpt)?;
            let catalog = read_catalog(&catalog_path)?;
            let (mut recs, skipped) = read_records_tolerant(&records_path, model.n_agents, 10)?;
            if let Some(l) = limit {
                recs.truncate(l);
            }
            let report =
                offline_replay(&agents, signal.as_ref(), &recs, &catalog, cfg.env.page_k)?;
            println!(
                "offline replay over {} records ({skipped} skipped):",
                recs.len()
            );
            println!("  full list    {}", report.full_list);
            println!("  entrance     {}", report.entrance);
            if let Some(path) = csv {
                append_offline_csv(&path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::EvalOnline {
            common,
            checkpoint: ckpt,
            episodes,
            click_model,
            sim_checkpoint,
            env_seed,
            csv,
        } => {
            let cfg = resolve(&common)?;
            echo_config(&cfg);
            let (_, agents, signal) = checkpoint::load_policy(&ckpt)?;
            let env_seed = env_seed.unwrap_or(common.seed);
            let mut env = Env::generate(cfg.env.clone(), env_seed)?;
            env.reseed(common.seed.wrapping_add(0x5eed));
            match click_model.as_str() {
                "ground-truth" => {}
                "simulator" => {
                    let path = sim_checkpoint
                        .or(cfg.paths.sim_checkpoint.clone())
                        .ok_or_else(|| {
                            Error::Config(
                                "--sim-checkpoint required with simulator clicks".into(),
                            )
                        })?;
                    let sim = checkpoint::load_simulator(&path)?;
                    env = env.with_click_model(ClickModel::Simulator(sim));
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown click model `{other}` (expected ground-truth or simulator)"
                    )))
                }
            }
            let report = online_eval(&agents, signal.as_ref(), &mut env, episodes)?;
            println!(
                "online eval over {} episodes: mean episode reward {:.4}",
                report.episodes, report.mean_episode_reward
            );
            println!("  {}", report.metrics);
            if let Some(path) = csv {
                append_online_csv(&path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Gradcheck { common, corrupt } => {
            let checks = run_gradcheck(common.seed, corrupt)?;
            let mut failing = Vec::new();
            println!("gradient checks (tolerance {GRADCHECK_TOLERANCE:.0e}):");
            for c in &checks {
                let status = if c.passes() { "PASS" } else { "FAIL" };
                println!(
                    "  {:<20} max rel err {:.3e}  {status}",
                    c.name,
                    c.report.max_rel_err()
                );
                if !c.passes() {
                    for b in c.report.failing_blocks(GRADCHECK_TOLERANCE) {
                        println!(
                            "      block {:<36} rel err {:.3e} at entry {}",
                            b.name, b.max_rel_err, b.worst_index
                        );
                    }
                    failing.push(c.name);
                }
            }
            if failing.is_empty() {
                println!("all gradient checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("failing groups: {}", failing.join(", "));
                Ok(ExitCode::from(4))
            }
        }
    }
}

fn append_offline_csv(path: &std::path::Path, r: &massa::eval::OfflineReport) -> Result<(), Error> {
    use std::io::Write;
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if new {
        writeln!(
            f,
            "k,precision_m1,precision_m2,precision_overall,ndcg_m1,ndcg_m2,ndcg_overall,records"
        )?;
    }
    for m in [&r.full_list, &r.entrance] {
        let p = &m.precision_per_module;
        let n = &m.ndcg_per_module;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            m.k,
            p.first().copied().unwrap_or(0.0),
            p.get(1).copied().unwrap_or(0.0),
            m.overall_precision(),
            n.first().copied().unwrap_or(0.0),
            n.get(1).copied().unwrap_or(0.0),
            m.overall_ndcg(),
            m.count
        )?;
    }
    Ok(())
}

fn append_online_csv(path: &std::path::Path, r: &massa::eval::OnlineReport) -> Result<(), Error> {
    use std::io::Write;
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if new {
        writeln!(
            f,
            "episodes,mean_episode_reward,precision_overall,ndcg_overall"
        )?;
    }
    writeln!(
        f,
        "{},{},{},{}",
        r.episodes,
        r.mean_episode_reward,
        r.metrics.overall_precision(),
        r.metrics.overall_ndcg()
    )?;
    Ok(())
}
