//! Binary feature files.
//!
//! Little-endian layout: magic `DRPT`, `u32` version, `u64` record count N,
//! `u32` feature dimension D, then N records of `u32` state index, `u32`
//! object index and D `f32` features. A JSON sidecar (`<file>.json`) records
//! the split name and the manifest directory the labels refer to.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::space::{CompositionSpace, Pair, Split};

pub const FEATURE_MAGIC: &[u8; 4] = b"DRPT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub split: Split,
    pub manifest: String,
    pub n: usize,
    pub feature_dim: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Write `dataset` to `path` plus its JSON sidecar.
pub fn write_features(path: &Path, dataset: &Dataset, manifest: &Path) -> Result<()> {
    let d = dataset.feature_dim;
    let mut buf = Vec::with_capacity(HEADER_LEN + dataset.len() * (8 + 4 * d));
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for s in &dataset.samples {
        buf.extend_from_slice(&(s.label.state as u32).to_le_bytes());
        buf.extend_from_slice(&(s.label.object as u32).to_le_bytes());
        for v in &s.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let sidecar = FeatureSidecar {
        split: dataset.split,
        manifest: manifest.display().to_string(),
        n: dataset.len(),
        feature_dim: d,
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Read a feature file for `split` and check its labels against `space`.
pub fn load_features(path: &Path, split: Split, space: &CompositionSpace) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |offset: usize| Error::Truncated {
        path: path.to_path_buf(),
        offset: offset as u64,
    };
    if bytes.len() < HEADER_LEN {
        return Err(truncated(bytes.len()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            offset: 0,
            reason: "missing DRPT magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let record = 8 + 4 * d;
    let expected = n
        .checked_mul(record)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| truncated(HEADER_LEN))?;
    if bytes.len() < expected {
        let whole = (bytes.len() - HEADER_LEN) / record;
        return Err(truncated(HEADER_LEN + whole * record));
    }
    if bytes.len() > expected {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            offset: expected as u64,
            reason: format!("{} trailing bytes after {n} records of dimension {d}", bytes.len() - expected),
        });
    }

    let mut samples = Vec::with_capacity(n);
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    for i in 0..n {
        let at = HEADER_LEN + i * record;
        let label = Pair::new(u32_at(at) as usize, u32_at(at + 4) as usize);
        if label.state >= space.n_states() || label.object >= space.n_objects() {
            return Err(Error::UnknownLabel {
                index: i,
                state: label.state,
                object: label.object,
            });
        }
        let features = bytes[at + 8..at + record]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Sample { features, label });
    }
    let dataset = Dataset::new(samples, split, d)?;
    dataset.check_labels(space)?;
    Ok(dataset)
}
