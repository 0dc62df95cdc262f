//! Diversity-regularized training, datasets, checkpoints and synthetic tasks.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod synth;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{load_dataset, read_examples, Dataset, Example};
pub use synth::{synth_generate, write_synthetic, SynthTask};
pub use trainer::{diversity_loss, evaluate, train, EpochRecord, TrainConfig, TrainOutcome};
