//! Length-sorted padded batching, Adam, and the epoch loop with
//! validation-accuracy model selection.

mod adam;
mod batch;
mod trainer;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use batch::{batch_loss_and_grads, forward_batch, make_batches, Batch};
pub use trainer::{
    evaluate_sequences, history_csv, train, train_with_progress, EpochRecord, TrainConfig, TrainOutcome,
};
