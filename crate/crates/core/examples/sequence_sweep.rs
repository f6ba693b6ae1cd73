//! Train the six status orderings and the joint baseline on five seeds of
//! the high-skew fixture and average their test metrics.
//!
//! ```text
//! cargo run --release --example sequence_sweep -- [out.csv]
//! ```

use std::collections::BTreeMap;

use drpt::config::RunConfig;
use drpt::data::synth_generate;
use drpt::model::{init_model, InitSource};
use drpt::training::{sweep_csv, sweep_sequences, SweepRow};

const SEEDS: u64 = 5;

fn main() -> drpt::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/trend.toml");
    let base = RunConfig::load(&path)?;

    let mut order = Vec::new();
    let mut sums: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    for i in 0..SEEDS {
        let mut cfg = base.clone();
        cfg.synth.seed += i;
        cfg.train.seed += i;
        let data = synth_generate(&cfg.synth)?;
        let (table, enc) =
            init_model(&data.space, &data.backbone, cfg.train.tau, cfg.train.seed, &InitSource::Gaussian)?;
        let rows = sweep_sequences(&cfg.train, &data.space, &enc, &table, &data.train, &data.test, 1)?;
        for r in rows {
            println!("seed {i}  {:<8} auc {:.3}", r.sequence, r.auc);
            if i == 0 {
                order.push(r.sequence.clone());
            }
            let acc = sums.entry(r.sequence).or_default();
            for (a, v) in acc.iter_mut().zip([r.seen, r.unseen, r.hm, r.auc]) {
                *a += v / SEEDS as f64;
            }
        }
    }

    let mean: Vec<SweepRow> = order
        .into_iter()
        .map(|sequence| {
            let [seen, unseen, hm, auc] = sums[&sequence];
            SweepRow {
                sequence,
                seen,
                unseen,
                hm,
                auc,
            }
        })
        .collect();
    let csv = sweep_csv(&mean);
    println!("\nmean over {SEEDS} seeds\n{csv}");
    if let Some(out) = std::env::args().nth(1) {
        std::fs::write(&out, csv).map_err(|e| drpt::Error::Io {
            path: out.into(),
            source: e,
        })?;
    }
    Ok(())
}
