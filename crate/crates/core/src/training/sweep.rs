//! Ablation over the six status orderings plus the joint-tuning baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::status::StatusSchedule;
use super::trainer::{train, TrainerConfig};
use crate::data::Dataset;
use crate::entanglement::WeightConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::model::{FrozenEncoders, PromptTable};
use crate::space::CompositionSpace;

pub const JOINT_LABEL: &str = "joint";

/// One configuration of the sweep. `seen` and `unseen` are the best
/// accuracies over the bias sweep; `hm` is the best harmonic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sequence: String,
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
    pub auc: f64,
}

impl SweepRow {
    pub fn from_report(sequence: String, report: &EvalReport) -> Self {
        let best = |f: fn(&crate::eval::CurvePoint) -> f64| report.curve.iter().map(f).fold(0.0, f64::max);
        SweepRow {
            sequence,
            seen: best(|p| p.seen_acc),
            unseen: best(|p| p.unseen_acc),
            hm: report.best_hm,
            auc: report.auc,
        }
    }
}

/// The seven trainer configurations of the sweep, in row order: every
/// ordering of o, a, ao under `base`'s round range and weighting, then the
/// joint baseline (always ao, no reweighting).
pub fn sweep_configs(base: &TrainerConfig) -> Result<Vec<(String, TrainerConfig)>> {
    let k = base.schedule.round_range();
    let mut out = Vec::with_capacity(7);
    for seq in StatusSchedule::all_sequences() {
        let schedule = StatusSchedule::new(seq, k)?;
        let cfg = TrainerConfig {
            schedule,
            joint_baseline: false,
            ..base.clone()
        };
        out.push((schedule.label(), cfg));
    }
    out.push((
        JOINT_LABEL.to_string(),
        TrainerConfig {
            joint_baseline: true,
            weight: WeightConfig::off(),
            ..base.clone()
        },
    ));
    Ok(out)
}

/// Train every sweep configuration from the same initial table and score it
/// on `test`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_sequences(
    base: &TrainerConfig,
    space: &CompositionSpace,
    enc: &FrozenEncoders,
    init: &PromptTable,
    train_set: &Dataset,
    test_set: &Dataset,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    sweep_configs(base)?
        .into_iter()
        .map(|(label, cfg)| {
            let (table, _) = train(&cfg, space, enc, init.clone(), train_set, None)?;
            let report = evaluate(enc, &table, test_set, space, threads)?;
            Ok(SweepRow::from_report(label, &report))
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("sequence,seen,unseen,hm,auc\n");
    for r in rows {
        writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", r.sequence, r.seen, r.unseen, r.hm, r.auc).unwrap();
    }
    out
}
