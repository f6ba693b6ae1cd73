//! Top-k retrieval in both directions with a trained prompt table.

use drpt::config::RunConfig;
use drpt::data::synth_generate;
use drpt::eval::{topk_image_retrieval, topk_text_retrieval};
use drpt::model::{init_model, InitSource};
use drpt::space::Split;
use drpt::training::train;

fn main() -> drpt::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/convergence.toml");
    let cfg = RunConfig::load(&path)?;
    let data = synth_generate(&cfg.synth)?;
    let space = &data.space;
    let (table, enc) = init_model(space, &data.backbone, cfg.train.tau, cfg.train.seed, &InitSource::Gaussian)?;
    let (table, _) = train(&cfg.train, space, &enc, table, &data.train, None)?;

    // Image to text: an unseen-pair test image against every test candidate.
    let (candidates, _) = space.candidates(Split::Test);
    let query = data
        .test
        .samples
        .iter()
        .find(|s| !space.is_seen(s.label))
        .expect("test split has unseen pairs");
    println!("image of '{}':", space.pair_name(query.label));
    for hit in topk_text_retrieval(&enc, &table, &query.features, &candidates, 3)? {
        let tag = if space.is_seen(hit.item) { "seen" } else { "unseen" };
        println!("  {:<20} {:>7.4}  {tag}", space.pair_name(hit.item), hit.score);
    }

    // Text to image: the test images closest to that pair's prompt.
    println!("prompt '{}':", space.pair_name(query.label));
    for hit in topk_image_retrieval(&enc, &table, query.label, &data.test, 5)? {
        println!("  sample {:>4}  {:<20} {:>7.4}", hit.item, space.pair_name(data.test.samples[hit.item].label), hit.score);
    }
    Ok(())
}
