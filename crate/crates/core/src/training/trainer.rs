use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::loss::{batch_gradients, DropoutMasks, Objective};
use super::status::{status_for_epoch, StatusSchedule, TrainStatus};
use crate::data::{batch_iter, Dataset, Sample};
use crate::entanglement::{WeightConfig, WeightDirection, WeightMode};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{encode_candidates, encode_image, logits_against, FrozenEncoders, PromptTable};
use crate::space::{CompositionSpace, Split};

/// Trainer hyperparameters. `Default` is the UT-Zappos setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: StatusSchedule,
    pub weight: WeightConfig,
    /// Inverted dropout on the concatenated prompt embedding during training.
    pub dropout_rate: f64,
    pub seed: u64,
    /// Always train both tables (joint-tuning baseline).
    pub joint_baseline: bool,
    /// Similarity temperature; 1 leaves `exp(f_v · f_t)` unscaled.
    pub tau: f64,
    /// Evaluate on the validation split every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig::ut_zappos()
    }
}

impl TrainerConfig {
    pub fn ut_zappos() -> Self {
        TrainerConfig {
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            batch_size: 128,
            epochs: 15,
            schedule: StatusSchedule::default(),
            weight: WeightConfig {
                alpha: 2.0,
                direction: WeightDirection::Suppress,
                mode: WeightMode::Equation,
            },
            dropout_rate: 0.3,
            seed: 0,
            joint_baseline: false,
            tau: 1.0,
            eval_every: 0,
        }
    }

    pub fn ao_clevr() -> Self {
        TrainerConfig {
            learning_rate: 5e-5,
            epochs: 20,
            ..TrainerConfig::ut_zappos()
        }
    }

    pub fn cgqa() -> Self {
        TrainerConfig {
            learning_rate: 5e-5,
            epochs: 45,
            schedule: StatusSchedule::default().with_round_range(5).expect("K = 5 is valid"),
            weight: WeightConfig {
                alpha: 0.5,
                direction: WeightDirection::Enhance,
                mode: WeightMode::Equation,
            },
            ..TrainerConfig::ut_zappos()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        self.weight.validate()
    }

    pub fn status_for(&self, epoch: usize) -> TrainStatus {
        if self.joint_baseline {
            TrainStatus::Joint
        } else {
            status_for_epoch(&self.schedule, epoch)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub best_hm: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub status: TrainStatus,
    /// Mean weighted loss over the epoch's batches (pre-update values).
    pub loss: f64,
    /// Accuracy of the epoch's forward passes over the seen candidates.
    pub train_acc: f64,
    pub val: Option<ValMetrics>,
    pub states_checksum_start: String,
    pub states_checksum_end: String,
    pub objects_checksum_start: String,
    pub objects_checksum_end: String,
}

/// Copy of both tables taken when training enters the joint status from a
/// single-table status. Kept for diagnostics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntrySnapshot {
    pub epoch: usize,
    pub theta_a: Vec<Vec<f64>>,
    pub theta_o: Vec<Vec<f64>>,
}

/// A maximal run of consecutive epochs under one status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub status: TrainStatus,
    pub first_epoch: usize,
    pub last_epoch: usize,
    /// Checksum of the frozen table at the start and end of the phase; `None`
    /// for joint phases.
    pub frozen_start: Option<String>,
    pub frozen_end: Option<String>,
}

impl Phase {
    pub fn frozen_unchanged(&self) -> bool {
        self.frozen_start == self.frozen_end
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<JointEntrySnapshot>,
    pub encoder_checksum_start: String,
    pub encoder_checksum_end: String,
}

impl TrainHistory {
    pub fn phases(&self) -> Vec<Phase> {
        let mut phases: Vec<Phase> = Vec::new();
        for rec in &self.epochs {
            let frozen = |start: bool| match rec.status {
                TrainStatus::Object => Some(if start { &rec.states_checksum_start } else { &rec.states_checksum_end }.clone()),
                TrainStatus::State => Some(if start { &rec.objects_checksum_start } else { &rec.objects_checksum_end }.clone()),
                TrainStatus::Joint => None,
            };
            match phases.last_mut() {
                Some(p) if p.status == rec.status && p.last_epoch + 1 == rec.epoch => {
                    p.last_epoch = rec.epoch;
                    p.frozen_end = frozen(false);
                }
                _ => phases.push(Phase {
                    status: rec.status,
                    first_epoch: rec.epoch,
                    last_epoch: rec.epoch,
                    frozen_start: frozen(true),
                    frozen_end: frozen(false),
                }),
            }
        }
        phases
    }

    /// True when every frozen table kept its checksum through its phase and
    /// the encoders never changed.
    pub fn freeze_sound(&self) -> bool {
        self.phases().iter().all(Phase::frozen_unchanged) && self.encoder_checksum_start == self.encoder_checksum_end
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,status,loss,train_acc,val_seen,val_unseen,val_hm,val_auc,states_checksum,objects_checksum\n",
        );
        for r in &self.epochs {
            let (s, u, h, a) = r
                .val
                .as_ref()
                .map(|v| (v.seen_acc.to_string(), v.unseen_acc.to_string(), v.best_hm.to_string(), v.auc.to_string()))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{s},{u},{h},{a},{},{}\n",
                r.epoch, r.status, r.loss, r.train_acc, r.states_checksum_end, r.objects_checksum_end
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("history.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("history.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Train `table` on the seen split. Deterministic given `config.seed`.
pub fn train(
    config: &TrainerConfig,
    space: &CompositionSpace,
    enc: &FrozenEncoders,
    mut table: PromptTable,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
) -> Result<(PromptTable, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.split != Split::Train {
        return Err(Error::Config(format!("training on the {} split", train_set.split)));
    }
    train_set.check_labels(space)?;
    let objective = Objective::new(space, &config.weight)?;
    let adam = AdamConfig::new(config.learning_rate, config.weight_decay);
    let mut state = AdamState::new(&table);
    let mut dropout_rng = rng_for(config.seed, 1);
    let width = 3 * table.latent_dim();
    let mut history = TrainHistory {
        encoder_checksum_start: enc.checksum(),
        ..Default::default()
    };
    let mut previous: Option<TrainStatus> = None;

    for epoch in 0..config.epochs {
        let status = config.status_for(epoch);
        if status == TrainStatus::Joint && previous.is_some_and(|p| p != TrainStatus::Joint) {
            let rows = |m: &ndarray::Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
            history.snapshots.push(JointEntrySnapshot {
                epoch,
                theta_a: rows(&table.theta_a),
                theta_o: rows(&table.theta_o),
            });
        }
        previous = Some(status);
        let states_checksum_start = table.checksum_states();
        let objects_checksum_start = table.checksum_objects();

        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let batches = batch_iter(train_set.len(), config.batch_size, config.seed, epoch as u64)?;
        for (b, indices) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = indices.iter().map(|&i| &train_set.samples[i]).collect();
            let masks = DropoutMasks::sample(&mut dropout_rng, objective.candidates().len(), width, config.dropout_rate);
            let (grads, diags) = batch_gradients(enc, &table, &batch, &objective, status, masks.as_ref())
                .map_err(|e| with_context(e, epoch, b))?;
            loss_sum += grads.loss * batch.len() as f64;
            hits += batch.iter().zip(&diags).filter(|(s, d)| d.predicted == s.label).count();
            state.apply(&mut table, &grads, status, &adam);
        }

        let val = match val_set {
            Some(v) if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 => {
                let r = evaluate(enc, &table, v, space, 1)?;
                Some(ValMetrics {
                    seen_acc: r.seen_acc,
                    unseen_acc: r.unseen_acc,
                    best_hm: r.best_hm,
                    auc: r.auc,
                })
            }
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            status,
            loss: loss_sum / train_set.len() as f64,
            train_acc: hits as f64 / train_set.len() as f64,
            val,
            states_checksum_start,
            states_checksum_end: table.checksum_states(),
            objects_checksum_start,
            objects_checksum_end: table.checksum_objects(),
        });
    }
    history.encoder_checksum_end = enc.checksum();
    Ok((table, history))
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { what, context } => Error::NonFinite {
            what,
            context: format!("epoch {epoch}, batch {batch}, {context}"),
        },
        other => other,
    }
}

/// Closed-world accuracy over the seen candidates without dropout.
pub fn seen_accuracy(enc: &FrozenEncoders, table: &PromptTable, dataset: &Dataset, space: &CompositionSpace) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let candidates = space.seen_candidates();
    let text = encode_candidates(enc, table, &candidates)?;
    let mut hits = 0;
    for s in &dataset.samples {
        let logits = logits_against(&encode_image(&s.features)?, &text, enc.tau);
        let best = crate::model::argmax(&logits).expect("nonempty candidates");
        hits += usize::from(candidates[best] == s.label);
    }
    Ok(hits as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::{init_model, InitSource};

    fn setup() -> (crate::data::SynthOutput, PromptTable, FrozenEncoders) {
        let out = synth_generate(&SynthConfig {
            samples_per_pair: 4,
            ..Default::default()
        })
        .unwrap();
        let (table, enc) = init_model(&out.space, &out.backbone, 1.0, 3, &InitSource::Gaussian).unwrap();
        (out, table, enc)
    }

    fn quick() -> TrainerConfig {
        TrainerConfig {
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 9,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_table() {
        let (out, table, enc) = setup();
        let cfg = TrainerConfig { epochs: 0, ..quick() };
        let (trained, history) = train(&cfg, &out.space, &enc, table.clone(), &out.train, None).unwrap();
        assert_eq!(trained, table);
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn frozen_tables_hold_their_checksums() {
        let (out, table, enc) = setup();
        let (_, history) = train(&quick(), &out.space, &enc, table, &out.train, None).unwrap();
        let e = &history.epochs;
        assert!(e[0..3].iter().all(|r| r.states_checksum_end == e[0].states_checksum_start));
        assert!(e[3..6].iter().all(|r| r.objects_checksum_end == e[3].objects_checksum_start));
        assert_ne!(e[2].objects_checksum_end, e[0].objects_checksum_start);
        assert!(history.freeze_sound());
        assert_eq!(history.phases().len(), 3);
        assert_eq!(history.snapshots.len(), 1);
        assert_eq!(history.snapshots[0].epoch, 6);
    }

    #[test]
    fn training_is_reproducible() {
        let (out, table, enc) = setup();
        let a = train(&quick(), &out.space, &enc, table.clone(), &out.train, Some(&out.val)).unwrap();
        let b = train(&quick(), &out.space, &enc, table, &out.train, Some(&out.val)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_train_split_and_bad_config() {
        let (out, table, enc) = setup();
        assert!(train(&quick(), &out.space, &enc, table.clone(), &out.test, None).is_err());
        let cfg = TrainerConfig {
            learning_rate: 0.0,
            ..quick()
        };
        assert!(matches!(
            train(&cfg, &out.space, &enc, table, &out.train, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn presets_follow_the_published_table() {
        let z = TrainerConfig::ut_zappos();
        assert_eq!((z.learning_rate, z.batch_size, z.epochs, z.schedule.round_range()), (5e-4, 128, 15, 3));
        let c = TrainerConfig::ao_clevr();
        assert_eq!((c.learning_rate, c.epochs, c.weight.alpha), (5e-5, 20, 2.0));
        let g = TrainerConfig::cgqa();
        assert_eq!((g.epochs, g.schedule.round_range(), g.weight.alpha), (45, 5, 0.5));
        assert_eq!(g.weight.direction, WeightDirection::Enhance);
        for cfg in [z, c, g] {
            assert_eq!((cfg.dropout_rate, cfg.weight_decay), (0.3, 1e-5));
        }
    }
}
