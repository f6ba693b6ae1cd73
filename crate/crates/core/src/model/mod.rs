//! The prompt model: learnable state and object embedding tables read through
//! a frozen affine text encoder, cosine similarity against normalised image
//! features, and closed-world inference.

mod checkpoint;

use std::fs;
use std::ops::Deref;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{CompositionSpace, Pair};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointSidecar, CHECKPOINT_MAGIC};

/// Standard deviation of gaussian prompt initialisation.
pub const PROMPT_INIT_STD: f64 = 0.02;

/// Learnable embeddings plus the frozen, pooled prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable {
    /// |A| × d
    pub theta_a: Array2<f64>,
    /// |O| × d
    pub theta_o: Array2<f64>,
    pub prefix: Array1<f64>,
}

impl PromptTable {
    pub fn latent_dim(&self) -> usize {
        self.prefix.len()
    }

    /// `concat(prefix, theta_a[a], theta_o[o])`, length 3d.
    pub fn prompt_embedding(&self, pair: Pair) -> Array1<f64> {
        concatenate![
            Axis(0),
            self.prefix.view(),
            self.theta_a.row(pair.state),
            self.theta_o.row(pair.object)
        ]
    }

    pub fn checksum_states(&self) -> String {
        crate::hash::f64_checksum(self.theta_a.iter())
    }

    pub fn checksum_objects(&self) -> String {
        crate::hash::f64_checksum(self.theta_o.iter())
    }

    fn check_pair(&self, pair: Pair) -> Result<()> {
        if pair.state >= self.theta_a.nrows() || pair.object >= self.theta_o.nrows() {
            return Err(Error::InvalidSpace(format!(
                "pair ({}, {}) outside the prompt table",
                pair.state, pair.object
            )));
        }
        Ok(())
    }
}

/// Frozen text-encoder surrogate `z = W_t u + b_t` and the similarity
/// temperature. Image features pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoders {
    /// D × 3d
    pub w_t: Array2<f64>,
    pub b_t: Array1<f64>,
    pub tau: f64,
}

impl FrozenEncoders {
    pub fn latent_dim(&self) -> usize {
        self.w_t.ncols() / 3
    }

    pub fn feature_dim(&self) -> usize {
        self.w_t.nrows()
    }

    pub fn checksum(&self) -> String {
        crate::hash::f64_checksum(
            self.w_t
                .iter()
                .chain(self.b_t.iter())
                .chain(std::iter::once(&self.tau)),
        )
    }

    /// Affine map of a prompt embedding, before normalisation.
    pub fn project(&self, prompt: ArrayView1<f64>) -> Array1<f64> {
        self.w_t.dot(&prompt) + &self.b_t
    }
}

/// A vector of unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Array1<f64>);

impl UnitVector {
    /// Normalise `v`; `None` for a zero or non-finite vector.
    pub fn try_new(v: Array1<f64>) -> Option<(Self, f64)> {
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 && norm.is_finite() {
            Some((UnitVector(v / norm), norm))
        } else {
            None
        }
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

impl Deref for UnitVector {
    type Target = Array1<f64>;

    fn deref(&self) -> &Array1<f64> {
        &self.0
    }
}

/// Seeded construction of the frozen backbone: `W_t` entries from
/// N(0, 1/√(3d)), a zero bias and a N(0, 1) prefix. Data generators and
/// models built from the same description share the map exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backbone {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Backbone {
    pub const FILE: &'static str = "backbone.json";

    fn check(&self) -> Result<()> {
        if self.latent_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config("latent_dim and feature_dim must be >= 1".into()));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn encoders(&self, tau: f64) -> Result<FrozenEncoders> {
        self.check()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {tau}")));
        }
        let cols = 3 * self.latent_dim;
        let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
        let mut rng = self.rng();
        let w_t = Array2::from_shape_simple_fn((self.feature_dim, cols), || normal.sample(&mut rng));
        Ok(FrozenEncoders {
            w_t,
            b_t: Array1::zeros(self.feature_dim),
            tau,
        })
    }

    pub fn prefix(&self) -> Array1<f64> {
        let mut rng = self.rng();
        // Skip past W_t so the prefix stream never overlaps the matrix.
        rng.set_stream(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array1::from_shape_simple_fn(self.latent_dim, || normal.sample(&mut rng))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Gaussian,
    /// Whitespace-separated text rows: |A| state rows then |O| object rows,
    /// each of length d.
    EmbeddingFile(PathBuf),
}

/// Build the prompt table and frozen encoders for `space`.
pub fn init_model(
    space: &CompositionSpace,
    backbone: &Backbone,
    tau: f64,
    seed: u64,
    source: &InitSource,
) -> Result<(PromptTable, FrozenEncoders)> {
    let enc = backbone.encoders(tau)?;
    let d = backbone.latent_dim;
    let (theta_a, theta_o) = match source {
        InitSource::Gaussian => {
            let normal = Normal::new(0.0, PROMPT_INIT_STD).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta_a =
                Array2::from_shape_simple_fn((space.n_states(), d), || normal.sample(&mut rng));
            let theta_o =
                Array2::from_shape_simple_fn((space.n_objects(), d), || normal.sample(&mut rng));
            (theta_a, theta_o)
        }
        InitSource::EmbeddingFile(path) => read_embeddings(path, space.n_states(), space.n_objects(), d)?,
    };
    let table = PromptTable {
        theta_a,
        theta_o,
        prefix: backbone.prefix(),
    };
    Ok((table, enc))
}

fn read_embeddings(path: &Path, n_states: usize, n_objects: usize, d: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let row = row.map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        rows.extend(row);
    }
    let n_rows = rows.len() / d.max(1);
    if n_rows != n_states + n_objects {
        return Err(Error::DimensionMismatch {
            expected: n_states + n_objects,
            found: n_rows,
        });
    }
    let all = Array2::from_shape_vec((n_rows, d), rows).expect("row count checked");
    Ok((
        all.slice(s![..n_states, ..]).to_owned(),
        all.slice(s![n_states.., ..]).to_owned(),
    ))
}

/// Unit-norm text feature of `pair`.
pub fn encode_text(enc: &FrozenEncoders, table: &PromptTable, pair: Pair) -> Result<UnitVector> {
    table.check_pair(pair)?;
    let z = enc.project(table.prompt_embedding(pair).view());
    UnitVector::try_new(z)
        .map(|(f, _)| f)
        .ok_or(Error::DegenerateFeature("text"))
}

/// Unit-norm image feature; the vision encoder is the identity over stored
/// features.
pub fn encode_image(features: &[f32]) -> Result<UnitVector> {
    let v: Array1<f64> = features.iter().map(|&x| f64::from(x)).collect();
    UnitVector::try_new(v)
        .map(|(f, _)| f)
        .ok_or(Error::DegenerateFeature("image"))
}

/// Text features for a list of candidates.
pub fn encode_candidates(enc: &FrozenEncoders, table: &PromptTable, candidates: &[Pair]) -> Result<Vec<UnitVector>> {
    candidates.iter().map(|&p| encode_text(enc, table, p)).collect()
}

/// `f_v · f_t / tau` for precomputed text features.
pub fn logits_against(f_v: &UnitVector, text: &[UnitVector], tau: f64) -> Vec<f64> {
    text.iter().map(|f_t| f_v.dot(&**f_t) / tau).collect()
}

pub fn class_logits(
    f_v: &UnitVector,
    candidates: &[Pair],
    enc: &FrozenEncoders,
    table: &PromptTable,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate list".into()));
    }
    let text = encode_candidates(enc, table, candidates)?;
    Ok(logits_against(f_v, &text, enc.tau))
}

/// Softmax with max subtraction.
pub fn similarity_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn predict(f_v: &UnitVector, candidates: &[Pair], enc: &FrozenEncoders, table: &PromptTable) -> Result<Pair> {
    let logits = class_logits(f_v, candidates, enc, table)?;
    Ok(candidates[argmax(&logits).expect("nonempty candidates")])
}
