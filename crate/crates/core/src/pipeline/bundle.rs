use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccvae::{CcVae, VaeConfig};
use crate::complex::Mode;
use crate::error::{Error, Result};
use crate::flow::{FlowBackbone, FlowConfig, LatentSet, LatentStats};
use crate::tensor::{checkpoint, ParamStore};

/// Version of the bundle metadata files.
pub const BUNDLE_VERSION: u32 = 1;
const PARAMS_FILE: &str = "params.ckpt";
const META_FILE: &str = "meta.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn check_version(found: u32) -> Result<()> {
    if found != BUNDLE_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: BUNDLE_VERSION,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeMeta {
    version: u32,
    config: VaeConfig,
    budget: usize,
    mode: Mode,
}

/// A trained VAE with what is needed to decode its latents.
#[derive(Clone, Debug)]
pub struct VaeBundle {
    pub model: CcVae,
    pub store: ParamStore<f32>,
    pub budget: usize,
    pub mode: Mode,
}

impl VaeBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join(PARAMS_FILE))?;
        write_json(
            &dir.join(META_FILE),
            &VaeMeta {
                version: BUNDLE_VERSION,
                config: self.model.config.clone(),
                budget: self.budget,
                mode: self.mode,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: VaeMeta = read_json(&dir.join(META_FILE))?;
        check_version(meta.version)?;
        let mut store = ParamStore::new();
        let model = CcVae::new(meta.config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
        store.load_from(&checkpoint::load(&dir.join(PARAMS_FILE))?)?;
        Ok(Self {
            model,
            store,
            budget: meta.budget,
            mode: meta.mode,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowMeta {
    version: u32,
    config: FlowConfig,
    stats: LatentStats,
    tau: f64,
    budget: usize,
}

/// A trained flow model (EMA weights) with its latent statistics.
#[derive(Clone, Debug)]
pub struct FlowBundle {
    pub model: FlowBackbone,
    pub store: ParamStore<f32>,
    pub stats: LatentStats,
    /// Default clustering threshold in raw latent units.
    pub tau: f64,
    pub budget: usize,
}

impl FlowBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join(PARAMS_FILE))?;
        write_json(
            &dir.join(META_FILE),
            &FlowMeta {
                version: BUNDLE_VERSION,
                config: self.model.config.clone(),
                stats: self.stats.clone(),
                tau: self.tau,
                budget: self.budget,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: FlowMeta = read_json(&dir.join(META_FILE))?;
        check_version(meta.version)?;
        let mut store = ParamStore::new();
        let model = FlowBackbone::new(meta.config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
        store.load_from(&checkpoint::load(&dir.join(PARAMS_FILE))?)?;
        Ok(Self {
            model,
            store,
            stats: meta.stats,
            tau: meta.tau,
            budget: meta.budget,
        })
    }
}

/// Encoded latents of one dataset record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentRecord {
    pub id: String,
    pub latents: LatentSet,
}

pub fn write_latents(path: &Path, records: &[LatentRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: LatentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if r.latents.values.len() != r.latents.rows * r.latents.dim {
            return Err(Error::Parse {
                line: i + 1,
                message: "latent values do not match rows x dim".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}
