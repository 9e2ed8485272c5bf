//! Paired data, synthetic rain and the training loop.

mod adam;
mod data;
mod synth;
mod train;

pub use adam::{adam_step, AdamState};
pub use data::{crop, load_dataset, random_crop, RainPair};
pub use synth::{
    apply_streaks, background, random_streaks, synth_dataset, synth_rain, Streak, SynthParams, SynthRain, BACKGROUND_MAX,
};
pub use train::{batch_gradients, sample_gradients, train, write_loss_csv, LossRecord, TrainConfig, Trainer};
