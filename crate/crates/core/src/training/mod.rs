//! Alternating discriminator/encoder optimization, class balancing,
//! checkpoints, early stopping and the ablation matrix.

mod ablation;
mod adam;
mod config;
mod run;
mod step;

pub use ablation::{
    ablation_matrix, ablation_table, find_row, standard_rows, AblationResult, AblationRow, PairSource, RAW_QUALITY,
};
pub use adam::{Adam, ADAM_EPS};
pub use config::TrainConfig;
pub use run::{
    balance_classes, epoch_batches, train, validation_loss, Checkpoint, EarlyStopper, EpochRecord,
    StepRecord, StopDecision, CHECKPOINT_FORMAT,
};
pub use step::{encoder_collections, encoder_objective, evaluate_loss, train_step, BatchTensors, EncoderPass, TrainState};
