//! Train on a synthetic fixture and report seen/unseen accuracy.
//!
//! ```text
//! cargo run --release --example train_drpt -- [fixtures/convergence.toml]
//! ```

use std::path::PathBuf;

use drpt::config::RunConfig;
use drpt::data::synth_generate;
use drpt::eval::evaluate;
use drpt::model::{init_model, InitSource};
use drpt::training::{seen_accuracy, train};

fn main() -> drpt::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/convergence.toml"));
    let cfg = RunConfig::load(&path)?;
    let data = synth_generate(&cfg.synth)?;
    let (table, enc) = init_model(&data.space, &data.backbone, cfg.train.tau, cfg.train.seed, &InitSource::Gaussian)?;

    let started = std::time::Instant::now();
    let (table, history) = train(&cfg.train, &data.space, &enc, table, &data.train, None)?;
    for e in &history.epochs {
        println!("epoch {:>3}  {:<2}  loss {:.4}", e.epoch, e.status.code(), e.loss);
    }
    println!("trained in {:.2?}, freeze sound: {}", started.elapsed(), history.freeze_sound());

    let train_acc = seen_accuracy(&enc, &table, &data.train, &data.space)?;
    let report = evaluate(&enc, &table, &data.test, &data.space, 1)?;
    println!("train acc {train_acc:.4}");
    println!(
        "test: seen {:.4}  unseen {:.4}  best hm {:.4}  auc {:.4}",
        report.seen_acc, report.unseen_acc, report.best_hm, report.auc
    );
    Ok(())
}
