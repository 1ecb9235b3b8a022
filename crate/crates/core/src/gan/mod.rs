//! Adversarial training: losses, the optimizer, the alternating loop and
//! checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trace;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{
    d_accuracy, discriminator_loss, discriminator_loss_on_tape, gan_losses, gan_value,
    generator_loss, generator_loss_on_tape, Accuracy, GanLosses, GeneratorLoss,
};
pub use trace::{LossTrace, TraceRecord, TRACE_HEADER};
pub use train::{
    sample_latent, train, Alternation, DataCursor, RngState, StopReason, TrainAbort, TrainConfig,
    TrainOutcome, Trainer, ACCURACY_THRESHOLD, EARLY_STOP_BAND,
};
