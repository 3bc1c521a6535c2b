//! Parameter checkpoint container.
//!
//! Flat binary layout, little-endian, bit-exact round trip:
//!
//! ```text
//! magic   8 bytes  "MASSACP1"
//! version u32      currently 1
//! kind    u16 len + utf8        ("policy" | "simulator")
//! meta    u32 len + utf8 JSON   (architecture needed to rebuild)
//! count   u32
//! entry*  u16 name len + utf8, u64 value count, f64 values
//! ```
//!
//! Entries are named parameter blocks (`agent0.actor.embed.item`, ...).
//! Optimizer state is not stored; loaded models are ready for evaluation
//! or fresh optimizers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::ParamBlocks;
use crate::signal::SignalNet;

const MAGIC: &[u8; 8] = b"MASSACP1";
const VERSION: u32 = 1;

/// A parsed checkpoint file.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta_json: String,
    pub entries: Vec<(String, Vec<f64>)>,
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let kind = c.kind.as_bytes();
    w.write_all(&(kind.len() as u16).to_le_bytes())?;
    w.write_all(kind)?;
    let meta = c.meta_json.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&(c.entries.len() as u32).to_le_bytes())?;
    for (name, values) in &c.entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = read_string_u16(&mut r)?;
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)
        .map_err(|_| Error::Checkpoint("truncated meta".into()))?;
    let meta_json =
        String::from_utf8(meta).map_err(|_| Error::Checkpoint("meta not utf8".into()))?;
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string_u16(&mut r)?;
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)
            .map_err(|_| Error::Checkpoint("truncated entry length".into()))?;
        let n = u64::from_le_bytes(len8) as usize;
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated entry data".into()))?;
            values.push(f64::from_le_bytes(buf));
        }
        entries.push((name, values));
    }
    Ok(Container {
        kind,
        meta_json,
        entries,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_string_u16(r: &mut impl Read) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated string length".into()))?;
    let n = u16::from_le_bytes(b) as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string not utf8".into()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyMeta {
    model: ModelConfig,
}

fn collect_blocks(prefix: &str, p: &impl ParamBlocks, out: &mut Vec<(String, Vec<f64>)>) {
    for (name, b) in p.blocks() {
        out.push((format!("{prefix}.{name}"), b.to_vec()));
    }
}

fn restore_blocks(
    prefix: &str,
    p: &mut impl ParamBlocks,
    entries: &[(String, Vec<f64>)],
) -> Result<()> {
    for (name, dst) in p.blocks_mut() {
        let full = format!("{prefix}.{name}");
        let (_, src) = entries
            .iter()
            .find(|(n, _)| *n == full)
            .ok_or_else(|| Error::Checkpoint(format!("missing block `{full}`")))?;
        if src.len() != dst.len() {
            return Err(Error::Checkpoint(format!(
                "block `{full}` has {} values, expected {}",
                src.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(src);
    }
    Ok(())
}

/// Save every agent component and the signal network (when present).
pub fn save_policy(
    path: &Path,
    model: &ModelConfig,
    agents: &[Agent],
    signal: Option<&SignalNet>,
) -> Result<()> {
    let meta = serde_json::to_string(&PolicyMeta {
        model: model.clone(),
    })?;
    let mut entries = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        collect_blocks(&format!("agent{i}.actor"), &a.actor, &mut entries);
        collect_blocks(&format!("agent{i}.q1"), &a.q1, &mut entries);
        collect_blocks(&format!("agent{i}.q2"), &a.q2, &mut entries);
        collect_blocks(&format!("agent{i}.value"), &a.value, &mut entries);
        collect_blocks(&format!("agent{i}.target"), &a.target_value, &mut entries);
    }
    if let Some(sig) = signal {
        collect_blocks("signal", &sig.net, &mut entries);
    }
    write_container(
        path,
        &Container {
            kind: "policy".into(),
            meta_json: meta,
            entries,
        },
    )
}

/// Rebuild agents and the signal network from a policy checkpoint.
pub fn load_policy(path: &Path) -> Result<(ModelConfig, Vec<Agent>, Option<SignalNet>)> {
    let c = read_container(path)?;
    if c.kind != "policy" {
        return Err(Error::Checkpoint(format!(
            "expected a policy checkpoint, found kind `{}`",
            c.kind
        )));
    }
    let meta: PolicyMeta = serde_json::from_str(&c.meta_json)
        .map_err(|e| Error::Checkpoint(format!("bad meta: {e}")))?;
    let model = meta.model;
    // Architecture comes from the meta; parameters are overwritten, so
    // the init seed is irrelevant.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agents: Vec<Agent> = (0..model.n_agents)
        .map(|_| Agent::new(&model, 0.01, &mut rng))
        .collect();
    for (i, a) in agents.iter_mut().enumerate() {
        restore_blocks(&format!("agent{i}.actor"), &mut a.actor, &c.entries)?;
        restore_blocks(&format!("agent{i}.q1"), &mut a.q1, &c.entries)?;
        restore_blocks(&format!("agent{i}.q2"), &mut a.q2, &c.entries)?;
        restore_blocks(&format!("agent{i}.value"), &mut a.value, &c.entries)?;
        restore_blocks(&format!("agent{i}.target"), &mut a.target_value, &c.entries)?;
    }
    let signal = if model.use_signal {
        let mut sig = SignalNet::new(&model, 0.01, &mut rng);
        restore_blocks("signal", &mut sig.net, &c.entries)?;
        Some(sig)
    } else {
        None
    };
    Ok((model, agents, signal))
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulatorMeta {
    config: crate::env::simulator::SimulatorConfig,
}

pub fn save_simulator(path: &Path, sim: &crate::env::simulator::CtrSimulator) -> Result<()> {
    let meta = serde_json::to_string(&SimulatorMeta {
        config: sim.cfg.clone(),
    })?;
    let mut entries = Vec::new();
    collect_blocks("sim", sim, &mut entries);
    write_container(
        path,
        &Container {
            kind: "simulator".into(),
            meta_json: meta,
            entries,
        },
    )
}

pub fn load_simulator(path: &Path) -> Result<crate::env::simulator::CtrSimulator> {
    let c = read_container(path)?;
    if c.kind != "simulator" {
        return Err(Error::Checkpoint(format!(
            "expected a simulator checkpoint, found kind `{}`",
            c.kind
        )));
    }
    let meta: SimulatorMeta = serde_json::from_str(&c.meta_json)
        .map_err(|e| Error::Checkpoint(format!("bad meta: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sim = crate::env::simulator::CtrSimulator::new(meta.config, &mut rng);
    restore_blocks("sim", &mut sim, &c.entries)?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> ModelConfig {
        crate::agent::tests::tiny_model_config()
    }

    #[test]
    fn policy_roundtrip_is_bit_exact() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let agents: Vec<Agent> = (0..m.n_agents).map(|_| Agent::new(&m, 0.01, &mut rng)).collect();
        let signal = SignalNet::new(&m, 0.01, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        save_policy(&path, &m, &agents, Some(&signal)).unwrap();
        let (m2, agents2, signal2) = load_policy(&path).unwrap();
        assert_eq!(m, m2);
        for (a, b) in agents.iter().zip(agents2.iter()) {
            for ((na, ba), (nb, bb)) in a.actor.blocks().iter().zip(b.actor.blocks().iter()) {
                assert_eq!(na, nb);
                for (x, y) in ba.iter().zip(bb.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            for ((_, ba), (_, bb)) in a
                .target_value
                .blocks()
                .iter()
                .zip(b.target_value.blocks().iter())
            {
                for (x, y) in ba.iter().zip(bb.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
        let s2 = signal2.unwrap();
        for ((_, ba), (_, bb)) in signal.net.blocks().iter().zip(s2.net.blocks().iter()) {
            for (x, y) in ba.iter().zip(bb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(
            &path,
            &Container {
                kind: "simulator".into(),
                meta_json: "{}".into(),
                entries: vec![],
            },
        )
        .unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(read_container(&path), Err(Error::Checkpoint(_))));
    }
}
