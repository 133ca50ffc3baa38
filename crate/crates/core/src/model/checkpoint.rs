//! Binary checkpoint layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `RANKLOSS` |
//! | 4 | format version (`u32`) |
//! | 8 | config length `L` (`u64`) |
//! | L | [`ModelConfig`] as UTF-8 JSON |
//! | 8 | parameter count `P` (`u64`) |
//! | 8·P | parameters as `f64` |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RANKLOSS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let config = serde_json::to_vec(params.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(config.len() as u64).to_le_bytes())?;
    out.write_all(&config)?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut version = [0u8; 4];
    input.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = read_u64(&mut input)?;
    if config_len > 1 << 24 {
        return Err(bad("config block too large"));
    }
    let mut config = vec![0u8; config_len as usize];
    input.read_exact(&mut config)?;
    let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let count = read_u64(&mut input)? as usize;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(ModelError::Checkpoint(format!("expected {count} parameters, found {} bytes", bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ModelParams::from_values(config, values)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
