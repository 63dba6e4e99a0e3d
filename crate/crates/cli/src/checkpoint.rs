//! Versioned binary checkpoints for the trigger nets and the toy victim.
//!
//! Layout: 8-byte magic, u32 version, u32 kind, u64 config length, a JSON
//! config record, u64 parameter count, then the parameters as
//! little-endian f64. Everything after the magic is little-endian.

use std::fs;
use std::path::Path;

use cmbd_core::victim::{ToyVictim, VictimConfig};
use cmbd_core::visual_trigger::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::errors::{CliError, Result};

const MAGIC: &[u8; 8] = b"CMBDCKP\0";
const VERSION: u32 = 1;

const KIND_GENERATOR: u32 = 1;
const KIND_DISCRIMINATOR: u32 = 2;
const KIND_VICTIM: u32 = 3;

fn kind_name(kind: u32) -> &'static str {
    match kind {
        KIND_GENERATOR => "generator",
        KIND_DISCRIMINATOR => "discriminator",
        KIND_VICTIM => "victim",
        _ => "unknown",
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorMeta {
    base_channels: usize,
    bottleneck_channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DiscriminatorMeta {
    base_channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct VictimMeta {
    hidden_dim: usize,
    common_dim: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    temperature: f64,
    label_loss_weight: f64,
    seed: u64,
    image_dim: usize,
    text_dim: usize,
    categories: usize,
}

fn write_checkpoint<M: Serialize>(
    path: &Path,
    kind: u32,
    meta: &M,
    params: &[f64],
) -> Result<()> {
    let config = serde_json::to_vec(meta).unwrap();
    let mut out = Vec::with_capacity(32 + config.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io_at("creating", parent, e))?;
    }
    fs::write(path, out).map_err(|e| CliError::io_at("writing", path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, msg: &str) -> CliError {
        CliError::Format(format!("{}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.off..self.off + n)
            .ok_or_else(|| self.fail("truncated checkpoint"))?;
        self.off += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_checkpoint<M: DeserializeOwned>(path: &Path, kind: u32) -> Result<(M, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io_at("opening", path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        off: 0,
        path,
    };
    if cur.take(8)? != MAGIC.as_slice() {
        return Err(cur.fail("not a checkpoint file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(cur.fail(&format!("unsupported checkpoint version {version}")));
    }
    let found = cur.u32()?;
    if found != kind {
        return Err(cur.fail(&format!(
            "expected a {} checkpoint, found {}",
            kind_name(kind),
            kind_name(found)
        )));
    }
    let config_len = cur.u64()? as usize;
    let meta: M = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| cur.fail(&format!("bad config record: {e}")))?;
    let count = cur.u64()? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        params.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    if cur.off != bytes.len() {
        return Err(cur.fail("trailing bytes after parameters"));
    }
    Ok((meta, params))
}

pub fn save_generator(path: &Path, net: &GeneratorNet) -> Result<()> {
    let cfg = net.config();
    let meta = GeneratorMeta {
        base_channels: cfg.base_channels,
        bottleneck_channels: cfg.bottleneck_channels,
    };
    write_checkpoint(path, KIND_GENERATOR, &meta, &net.params)
}

pub fn load_generator(path: &Path) -> Result<GeneratorNet> {
    let (meta, params): (GeneratorMeta, _) = read_checkpoint(path, KIND_GENERATOR)?;
    let config = GeneratorConfig {
        base_channels: meta.base_channels,
        bottleneck_channels: meta.bottleneck_channels,
    };
    GeneratorNet::with_params(config, params).map_err(CliError::from)
}

pub fn save_discriminator(path: &Path, net: &DiscriminatorNet) -> Result<()> {
    let meta = DiscriminatorMeta {
        base_channels: net.config().base_channels,
    };
    write_checkpoint(path, KIND_DISCRIMINATOR, &meta, &net.params)
}

pub fn load_discriminator(path: &Path) -> Result<DiscriminatorNet> {
    let (meta, params): (DiscriminatorMeta, _) = read_checkpoint(path, KIND_DISCRIMINATOR)?;
    let config = DiscriminatorConfig {
        base_channels: meta.base_channels,
    };
    DiscriminatorNet::with_params(config, params).map_err(CliError::from)
}

pub fn save_victim(path: &Path, victim: &ToyVictim) -> Result<()> {
    let c = victim.config();
    let meta = VictimMeta {
        hidden_dim: c.hidden_dim,
        common_dim: c.common_dim,
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        temperature: c.temperature,
        label_loss_weight: c.label_loss_weight,
        seed: c.seed,
        image_dim: victim.image_dim(),
        text_dim: victim.text_dim(),
        categories: victim.categories(),
    };
    write_checkpoint(path, KIND_VICTIM, &meta, &victim.params)
}

pub fn load_victim(path: &Path) -> Result<ToyVictim> {
    let (meta, params): (VictimMeta, _) = read_checkpoint(path, KIND_VICTIM)?;
    let config = VictimConfig {
        hidden_dim: meta.hidden_dim,
        common_dim: meta.common_dim,
        epochs: meta.epochs,
        batch_size: meta.batch_size,
        learning_rate: meta.learning_rate,
        temperature: meta.temperature,
        label_loss_weight: meta.label_loss_weight,
        seed: meta.seed,
    };
    ToyVictim::with_params(config, meta.image_dim, meta.text_dim, meta.categories, params)
        .map_err(CliError::from)
}
