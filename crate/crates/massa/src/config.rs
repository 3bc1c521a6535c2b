//! Run configuration: a TOML file with `[env]`, `[trainer]`, `[data]`,
//! and `[paths]` sections layered over a preset, with CLI flags applied
//! last. Unknown keys anywhere are rejected.
//!
//! Precedence, lowest to highest: preset defaults, config file, flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::dataset::DataGenConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainerConfig;

/// Dataset generation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_users: usize,
    pub n_records: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_records: 20_000,
        }
    }
}

/// File locations used by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub catalog: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub sim_checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// The fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::desk(),
            trainer: TrainerConfig::desk(),
            data: DataSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Base configuration a file/flags layer on top of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Minutes-per-run scale; the default.
    Desk,
    /// Reported-scale dimensions (118-dim items, 2000-item pools, 64-dim
    /// signals, batch 256).
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `desk` or `paper`)"
            ))),
        }
    }
}

impl Preset {
    pub fn base(self) -> RunConfig {
        match self {
            Preset::Desk => RunConfig::default(),
            Preset::Paper => RunConfig {
                env: EnvConfig::paper_scale(),
                trainer: TrainerConfig::default(),
                ..RunConfig::default()
            },
        }
    }
}

fn merge_value(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Layer an optional TOML file over a preset. Unknown keys fail the final
/// typed parse.
pub fn load_config(preset: Preset, file: Option<&Path>) -> Result<RunConfig> {
    let base = preset.base();
    let Some(path) = file else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let over: toml::Value =
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad TOML: {e}")))?;
    let mut merged = toml::Value::try_from(&base)
        .map_err(|e| Error::Config(format!("internal config serialization: {e}")))?;
    merge_value(&mut merged, over);
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        Ok(())
    }

    pub fn data_gen(&self) -> DataGenConfig {
        DataGenConfig {
            n_users: self.data.n_users,
            n_records: self.data.n_records,
            env: self.env.clone(),
        }
    }

    /// The effective configuration as TOML, printed before any work and
    /// embedded as a comment header in metrics files.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("<unserializable config: {e}>"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn default_config_is_valid_and_desk_scale() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.env.d_item, 16);
        assert_eq!(cfg.trainer.batch_size, 32);
    }

    #[test]
    fn paper_preset_matches_reported_dimensions() {
        let cfg = Preset::Paper.base();
        assert_eq!(cfg.env.d_item, 118);
        assert_eq!(cfg.env.pool_size, 2000);
        assert_eq!(cfg.env.k_history, 50);
        assert_eq!(cfg.trainer.d_sig, 64);
        assert_eq!(cfg.trainer.batch_size, 256);
        assert_eq!(cfg.trainer.buffer_capacity, 1_000_000);
        assert_eq!(cfg.trainer.gamma, 0.99);
        assert_eq!(cfg.trainer.alpha, 0.01);
        assert_eq!(cfg.trainer.delta, 0.01);
        assert_eq!(cfg.trainer.learning_rate, 0.01);
    }

    #[test]
    fn file_overrides_preset_and_unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "[trainer]\nalpha = 0.25\n[env]\ncatalog_size = 77").unwrap();
        drop(f);
        let cfg = load_config(Preset::Desk, Some(&path)).unwrap();
        assert_eq!(cfg.trainer.alpha, 0.25);
        assert_eq!(cfg.env.catalog_size, 77);
        // Untouched keys keep preset values.
        assert_eq!(cfg.trainer.batch_size, 32);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[trainer]\nlearning_rate_typo = 0.1\n").unwrap();
        assert!(matches!(
            load_config(Preset::Desk, Some(&bad)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn echo_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.echo();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
