//! Compare the analytic prompt gradients with central finite differences
//! under each training status.

use drpt::data::{synth_generate, SynthConfig};
use drpt::model::{init_model, InitSource};
use drpt::training::{finite_diff_check, Objective, TrainStatus};
use drpt::WeightConfig;

fn main() -> drpt::Result<()> {
    let data = synth_generate(&SynthConfig {
        noise_sigma: 0.2,
        ..Default::default()
    })?;
    let (mut table, enc) = init_model(&data.space, &data.backbone, 1.0, 3, &InitSource::Gaussian)?;
    // Move away from the near-zero initialisation so every entry matters.
    table.theta_a *= 25.0;
    table.theta_o *= 25.0;
    let objective = Objective::new(&data.space, &WeightConfig::default())?;
    let batch: Vec<_> = data.train.samples.iter().step_by(17).take(12).collect();

    for h in [1e-3, 1e-5] {
        for status in TrainStatus::ALL {
            let err = finite_diff_check(&enc, &table, &batch, &objective, status, h)?;
            println!("h {h:.0e}  {:<2}  max rel error {err:.3e}", status.code());
        }
    }
    Ok(())
}
