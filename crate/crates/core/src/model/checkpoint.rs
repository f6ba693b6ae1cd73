//! Model checkpoints.
//!
//! Little-endian binary: magic `DRPM`, `u32` version, `u32` |A|, `u32` |O|,
//! `u32` d, `u32` D, `f64` tau, then the prefix, `theta_a`, `theta_o`, `W_t`
//! (row-major D × 3d) and `b_t` as `f64` arrays. A JSON sidecar
//! (`<file>.json`) carries the manifest hash and the training config.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{FrozenEncoders, PromptTable};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRPM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub table: PromptTable,
    pub encoders: FrozenEncoders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub space_hash: String,
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.table;
        let e = &self.encoders;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            VERSION,
            t.theta_a.nrows() as u32,
            t.theta_o.nrows() as u32,
            t.latent_dim() as u32,
            e.feature_dim() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&e.tau.to_le_bytes());
        let arrays = t
            .prefix
            .iter()
            .chain(t.theta_a.iter())
            .chain(t.theta_o.iter())
            .chain(e.w_t.iter())
            .chain(e.b_t.iter());
        for v in arrays {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |offset: usize| Error::Truncated {
            path: path.to_path_buf(),
            offset: offset as u64,
        };
        if bytes.len() < HEADER_LEN {
            return Err(truncated(bytes.len()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                offset: 0,
                reason: "missing DRPM magic".into(),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (version, n_a, n_o, d, big_d) = (u32_at(0), u32_at(1), u32_at(2), u32_at(3), u32_at(4));
        if version != VERSION as usize {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let tau = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let counts = [d, n_a * d, n_o * d, big_d * 3 * d, big_d];
        let total: usize = counts.iter().sum();
        let expected = HEADER_LEN + 8 * total;
        if bytes.len() < expected {
            return Err(truncated(bytes.len()));
        }
        if bytes.len() > expected {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                offset: expected as u64,
                reason: "trailing bytes".into(),
            });
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let prefix = Array1::from(take(d));
        let theta_a = Array2::from_shape_vec((n_a, d), take(n_a * d)).unwrap();
        let theta_o = Array2::from_shape_vec((n_o, d), take(n_o * d)).unwrap();
        let w_t = Array2::from_shape_vec((big_d, 3 * d), take(big_d * 3 * d)).unwrap();
        let b_t = Array1::from(take(big_d));
        Ok(Checkpoint {
            table: PromptTable {
                theta_a,
                theta_o,
                prefix,
            },
            encoders: FrozenEncoders { w_t, b_t, tau },
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint, sidecar: &CheckpointSidecar) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Option<CheckpointSidecar>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let checkpoint = Checkpoint::from_bytes(&bytes, path)?;
    let side = sidecar_path(path);
    let sidecar = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&side, e)),
    };
    Ok((checkpoint, sidecar))
}
