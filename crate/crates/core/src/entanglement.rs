//! Entanglement of the seen split and the loss weights derived from it.
//!
//! `ent_a[a]` counts the seen partners of state `a`, `ent_o[o]` those of
//! object `o`, and `ent_avg` is the fill rate of the state × object grid. The
//! variances compare raw counts against the fill rate, exactly as the metric
//! is defined, so their units are mixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{CompositionSpace, Pair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementStats {
    pub n_states: usize,
    pub n_objects: usize,
    pub n_seen: usize,
    pub ent_avg: f64,
    pub ent_a: Vec<usize>,
    pub ent_o: Vec<usize>,
    pub var_a: f64,
    pub var_o: f64,
    /// Seen pairs the statistics were computed over, in canonical order.
    #[serde(skip)]
    pub seen_pairs: Vec<Pair>,
}

pub fn compute_entanglement(space: &CompositionSpace) -> EntanglementStats {
    let n_states = space.n_states();
    let n_objects = space.n_objects();
    let mut ent_a = vec![0usize; n_states];
    let mut ent_o = vec![0usize; n_objects];
    for p in &space.seen_pairs {
        ent_a[p.state] += 1;
        ent_o[p.object] += 1;
    }
    let n_seen = space.n_seen();
    let ent_avg = n_seen as f64 / (n_states as f64 * n_objects as f64);
    let variance = |counts: &[usize]| {
        counts
            .iter()
            .map(|&c| (c as f64 - ent_avg).powi(2))
            .sum::<f64>()
            / counts.len() as f64
    };
    EntanglementStats {
        n_states,
        n_objects,
        n_seen,
        ent_avg,
        var_a: variance(&ent_a),
        var_o: variance(&ent_o),
        ent_a,
        ent_o,
        seen_pairs: space.seen_candidates(),
    }
}

/// Whether the reweighting suppresses (`w-`) or enhances (`w+`) strongly
/// entangled compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDirection {
    Suppress,
    Enhance,
}

/// Which entanglement score feeds the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Product of the raw partner counts.
    Equation,
    /// Product of absolute deviations of the counts from their means.
    Pseudocode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub alpha: f64,
    pub direction: WeightDirection,
    pub mode: WeightMode,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            alpha: 2.0,
            direction: WeightDirection::Suppress,
            mode: WeightMode::Equation,
        }
    }
}

impl WeightConfig {
    /// No reweighting: every composition gets weight 1.
    pub fn off() -> Self {
        WeightConfig {
            alpha: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

impl EntanglementStats {
    fn raw_score(&self, pair: Pair, mode: WeightMode) -> f64 {
        let a = self.ent_a[pair.state] as f64;
        let o = self.ent_o[pair.object] as f64;
        match mode {
            WeightMode::Equation => a * o,
            WeightMode::Pseudocode => {
                let mean = |c: &[usize]| c.iter().sum::<usize>() as f64 / c.len() as f64;
                (a - mean(&self.ent_a)).abs() * (o - mean(&self.ent_o)).abs()
            }
        }
    }

    fn max_seen_score(&self, mode: WeightMode) -> Result<f64> {
        let max = self
            .seen_pairs
            .iter()
            .map(|&p| self.raw_score(p, mode))
            .fold(0.0_f64, f64::max);
        if max > 0.0 {
            Ok(max)
        } else {
            Err(Error::DegenerateEntanglement)
        }
    }
}

fn check_pair(stats: &EntanglementStats, pair: Pair) -> Result<()> {
    if pair.state >= stats.n_states || pair.object >= stats.n_objects {
        return Err(Error::InvalidSpace(format!(
            "pair ({}, {}) outside a {}×{} grid",
            pair.state, pair.object, stats.n_states, stats.n_objects
        )));
    }
    Ok(())
}

fn weight_from_score(score: f64, cfg: &WeightConfig) -> f64 {
    match cfg.direction {
        WeightDirection::Suppress => 1.0 + cfg.alpha * (1.0 - score),
        WeightDirection::Enhance => 1.0 + cfg.alpha * score,
    }
}

/// Loss weight of `pair`, in `[1, 1 + alpha]`. The score is normalised by its
/// maximum over the seen pairs.
pub fn composition_weight(stats: &EntanglementStats, pair: Pair, cfg: &WeightConfig) -> Result<f64> {
    check_pair(stats, pair)?;
    let max = stats.max_seen_score(cfg.mode)?;
    let score = (stats.raw_score(pair, cfg.mode) / max).min(1.0);
    Ok(weight_from_score(score, cfg))
}

/// Weights for every seen pair in canonical order, computed once per space.
pub fn seen_weights(stats: &EntanglementStats, cfg: &WeightConfig) -> Result<Vec<f64>> {
    if cfg.alpha == 0.0 {
        return Ok(vec![1.0; stats.seen_pairs.len()]);
    }
    let max = stats.max_seen_score(cfg.mode)?;
    Ok(stats
        .seen_pairs
        .iter()
        .map(|&p| weight_from_score(stats.raw_score(p, cfg.mode) / max, cfg))
        .collect())
}
