//! Alternating optimization of the two generators against the two
//! discriminators, with a constant-then-linear learning-rate schedule and
//! directory checkpoints.

mod adam;
mod checkpoint;
mod run;
mod schedule;
mod state;

pub use adam::{Adam, BETA2, EPSILON};
pub use checkpoint::{
    checkpoint_name, compare_snapshot, load_checkpoint, load_generators, save_checkpoint, CheckpointBundle, LossHistory,
    FORMAT_VERSION,
};
pub use run::{checkpoint_path, epoch_order, iterations_per_epoch, train, train_from, TRAIN_LOG};
pub use schedule::lr_at_epoch;
pub use state::{train_step, ModelBundle, StepLosses, TrainState};
