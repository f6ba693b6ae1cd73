//! Reweighted cross-entropy over the seen candidates and its exact gradient
//! with respect to the state and object tables.
//!
//! For a batch of B samples, candidate text features `f_c = z_c / |z_c|` with
//! `z_c = W_t u_c + b_t`, and logits `l_ic = f_v,i · f_c / tau`:
//!
//! ```text
//! L        = -(1/B) Σ_i w_i log softmax(l_i)[y_i]
//! ∂L/∂l_ic = w_i (p_ic - [c = y_i]) / B
//! ∂L/∂z_c  = (I - f_c f_cᵀ) G_c / |z_c|,   G_c = Σ_i ∂L/∂l_ic f_v,i / tau
//! ∂L/∂u_c  = W_tᵀ ∂L/∂z_c  (times the dropout mask, if any)
//! ```
//!
//! The state and object slices of `∂L/∂u_c` are scattered into the rows of
//! the candidate's state and object.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::status::TrainStatus;
use crate::data::Sample;
use crate::entanglement::{compute_entanglement, seen_weights, EntanglementStats, WeightConfig};
use crate::error::{Error, Result};
use crate::model::{encode_image, FrozenEncoders, PromptTable, UnitVector};
use crate::space::{CompositionSpace, Pair};

/// Training candidates (the seen pairs, canonical order) with their cached
/// loss weights.
#[derive(Debug, Clone)]
pub struct Objective {
    candidates: Vec<Pair>,
    weights: Vec<f64>,
    index: HashMap<Pair, usize>,
}

impl Objective {
    pub fn new(space: &CompositionSpace, weight_cfg: &WeightConfig) -> Result<Self> {
        Self::from_stats(&compute_entanglement(space), weight_cfg)
    }

    pub fn from_stats(stats: &EntanglementStats, weight_cfg: &WeightConfig) -> Result<Self> {
        weight_cfg.validate()?;
        let weights = seen_weights(stats, weight_cfg)?;
        let candidates = stats.seen_pairs.clone();
        let index = candidates.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Ok(Objective {
            candidates,
            weights,
            index,
        })
    }

    pub fn candidates(&self) -> &[Pair] {
        &self.candidates
    }

    pub fn weight(&self, pair: Pair) -> Option<f64> {
        self.index.get(&pair).map(|&i| self.weights[i])
    }
}

/// Inverted-dropout masks on the concatenated prompt embedding, one per
/// training candidate; kept entries are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    masks: Vec<Array1<f64>>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut impl Rng, n_candidates: usize, width: usize, rate: f64) -> Option<Self> {
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        let masks = (0..n_candidates)
            .map(|_| Array1::from_shape_simple_fn(width, || if rng.random::<f64>() < rate { 0.0 } else { keep }))
            .collect();
        Some(DropoutMasks { masks })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDiagnostic {
    pub weight: f64,
    pub prob_true: f64,
    /// Highest-scoring seen candidate.
    pub predicted: Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta_a: Array2<f64>,
    pub theta_o: Array2<f64>,
    pub loss: f64,
}

struct TextCache {
    features: Vec<UnitVector>,
    norms: Vec<f64>,
}

struct Forward {
    text: TextCache,
    images: Vec<UnitVector>,
    /// Softmax rows, B × C.
    probs: Vec<Vec<f64>>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    loss: f64,
    diagnostics: Vec<SampleDiagnostic>,
}

fn encode_training_text(
    enc: &FrozenEncoders,
    table: &PromptTable,
    candidates: &[Pair],
    dropout: Option<&DropoutMasks>,
) -> Result<TextCache> {
    let mut features = Vec::with_capacity(candidates.len());
    let mut norms = Vec::with_capacity(candidates.len());
    for (c, &pair) in candidates.iter().enumerate() {
        let mut u = table.prompt_embedding(pair);
        if let Some(d) = dropout {
            u *= &d.masks[c];
        }
        let (f, n) = UnitVector::try_new(enc.project(u.view())).ok_or(Error::DegenerateFeature("text"))?;
        features.push(f);
        norms.push(n);
    }
    Ok(TextCache { features, norms })
}

fn forward(
    enc: &FrozenEncoders,
    table: &PromptTable,
    batch: &[&Sample],
    objective: &Objective,
    dropout: Option<&DropoutMasks>,
) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let text = encode_training_text(enc, table, &objective.candidates, dropout)?;
    let mut images = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    let mut weights = Vec::with_capacity(batch.len());
    let mut diagnostics = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let target = *objective.index.get(&sample.label).ok_or(Error::UnknownLabel {
            index: i,
            state: sample.label.state,
            object: sample.label.object,
        })?;
        let f_v = encode_image(&sample.features)?;
        let logits: Vec<f64> = text.features.iter().map(|f_t| f_v.dot(&**f_t) / enc.tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        let row: Vec<f64> = logits.iter().map(|&l| (l - log_z).exp()).collect();
        let w = objective.weights[target];
        let term = -w * (logits[target] - log_z);
        if !term.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                context: format!("sample {i}"),
            });
        }
        total += term;
        let best = crate::model::argmax(&logits).expect("nonempty candidates");
        diagnostics.push(SampleDiagnostic {
            weight: w,
            prob_true: row[target],
            predicted: objective.candidates[best],
        });
        images.push(f_v);
        probs.push(row);
        targets.push(target);
        weights.push(w);
    }
    Ok(Forward {
        text,
        images,
        probs,
        targets,
        weights,
        loss: total / batch.len() as f64,
        diagnostics,
    })
}

/// Weighted cross-entropy of `batch` against the seen candidates.
pub fn batch_loss(
    enc: &FrozenEncoders,
    table: &PromptTable,
    batch: &[&Sample],
    objective: &Objective,
    dropout: Option<&DropoutMasks>,
) -> Result<(f64, Vec<SampleDiagnostic>)> {
    let fwd = forward(enc, table, batch, objective, dropout)?;
    Ok((fwd.loss, fwd.diagnostics))
}

/// Exact gradients of [`batch_loss`]; the table frozen under `status` gets an
/// all-zero gradient.
pub fn batch_gradients(
    enc: &FrozenEncoders,
    table: &PromptTable,
    batch: &[&Sample],
    objective: &Objective,
    status: TrainStatus,
    dropout: Option<&DropoutMasks>,
) -> Result<(Gradients, Vec<SampleDiagnostic>)> {
    let fwd = forward(enc, table, batch, objective, dropout)?;
    let d = table.latent_dim();
    let big_d = enc.feature_dim();
    let scale = 1.0 / (batch.len() as f64 * enc.tau);
    let mut theta_a = Array2::zeros(table.theta_a.raw_dim());
    let mut theta_o = Array2::zeros(table.theta_o.raw_dim());

    for (c, &pair) in objective.candidates.iter().enumerate() {
        let mut g = Array1::<f64>::zeros(big_d);
        for (i, f_v) in fwd.images.iter().enumerate() {
            let indicator = if fwd.targets[i] == c { 1.0 } else { 0.0 };
            let coef = fwd.weights[i] * (fwd.probs[i][c] - indicator) * scale;
            g.scaled_add(coef, &**f_v);
        }
        let f_t = &fwd.text.features[c];
        let g_z = (&g - &(&**f_t * f_t.dot(&g))) / fwd.text.norms[c];
        let mut g_u = enc.w_t.t().dot(&g_z);
        if let Some(masks) = dropout {
            g_u *= &masks.masks[c];
        }
        if status.trains_states() {
            let mut row = theta_a.row_mut(pair.state);
            row += &g_u.slice(s![d..2 * d]);
        }
        if status.trains_objects() {
            let mut row = theta_o.row_mut(pair.object);
            row += &g_u.slice(s![2 * d..3 * d]);
        }
    }
    if let Some(bad) = theta_a.iter().chain(theta_o.iter()).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            context: format!("entry {bad}"),
        });
    }
    Ok((
        Gradients {
            theta_a,
            theta_o,
            loss: fwd.loss,
        },
        fwd.diagnostics,
    ))
}

/// Largest relative disagreement between the analytic gradient and central
/// differences of the loss, over every entry trainable under `status`:
/// `|g - n| / max(|g|, |n|, 1e-12)`. Dropout is never applied.
pub fn finite_diff_check(
    enc: &FrozenEncoders,
    table: &PromptTable,
    batch: &[&Sample],
    objective: &Objective,
    status: TrainStatus,
    h: f64,
) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!("step h must be > 0, got {h}")));
    }
    let (grads, _) = batch_gradients(enc, table, batch, objective, status, None)?;
    let mut probe = table.clone();
    let mut worst = 0.0_f64;
    let loss_at = |probe: &PromptTable| batch_loss(enc, probe, batch, objective, None).map(|(l, _)| l);

    type Field = fn(&mut PromptTable) -> &mut Array2<f64>;
    let groups: [(bool, Field, &Array2<f64>); 2] = [
        (status.trains_states(), |t| &mut t.theta_a, &grads.theta_a),
        (status.trains_objects(), |t| &mut t.theta_o, &grads.theta_o),
    ];
    for (active, field, analytic) in groups {
        if !active {
            continue;
        }
        for (idx, &g) in analytic.indexed_iter() {
            let original = field(&mut probe)[idx];
            field(&mut probe)[idx] = original + h;
            let plus = loss_at(&probe)?;
            field(&mut probe)[idx] = original - h;
            let minus = loss_at(&probe)?;
            field(&mut probe)[idx] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
