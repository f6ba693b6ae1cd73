//! Entanglement-reweighted prompt tuning driven by the status machine.

mod adam;
mod loss;
mod status;
mod sweep;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use loss::{
    batch_gradients, batch_loss, finite_diff_check, DropoutMasks, Gradients, Objective, SampleDiagnostic,
};
pub use status::{status_for_epoch, StatusSchedule, TrainStatus};
pub use sweep::{sweep_configs, sweep_csv, sweep_sequences, SweepRow, JOINT_LABEL};
pub use trainer::{
    seen_accuracy, train, EpochRecord, JointEntrySnapshot, Phase, TrainHistory, TrainerConfig, ValMetrics,
};
