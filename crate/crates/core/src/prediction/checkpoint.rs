//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "VPGRUCK1"
//! input_dim  u32
//! hidden     u32
//! layers     u32
//! history    u32
//! horizon    u32
//! n_params   u64
//! params     n_params × f64
//! ```

use std::fs;
use std::path::Path;

use super::gru::{GruModel, Layout};
use super::PredictionConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VPGRUCK1";
const HEADER_LEN: usize = 8 + 5 * 4 + 8;
const MAX_DIM: u32 = 4096;
const MAX_LAYERS: u32 = 16;

/// A trained model together with the window geometry it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GruModel,
    pub config: PredictionConfig,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.params.len());
    out.extend_from_slice(MAGIC);
    for v in [
        m.input_dim(),
        m.hidden(),
        m.n_layers(),
        ck.config.history,
        ck.config.horizon,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
    for p in &m.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let input_dim = u32_at(bytes, 8);
    let hidden = u32_at(bytes, 12);
    let layers = u32_at(bytes, 16);
    let history = u32_at(bytes, 20);
    let horizon = u32_at(bytes, 24);
    let n_params = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
    if input_dim == 0 || input_dim > MAX_DIM || hidden == 0 || hidden > MAX_DIM {
        return Err(Error::Checkpoint(format!("implausible dims {input_dim}×{hidden}")));
    }
    if layers == 0 || layers > MAX_LAYERS {
        return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
    }
    if history == 0 || horizon == 0 {
        return Err(Error::Checkpoint("history and horizon must be positive".into()));
    }
    let layout = Layout::new(input_dim as usize, hidden as usize, layers as usize);
    if n_params != layout.len as u64 {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match architecture ({})",
            layout.len
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != layout.len * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            layout.len * 8,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(Checkpoint {
        model: GruModel { layout, params },
        config: PredictionConfig {
            history: history as usize,
            horizon: horizon as usize,
        },
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
