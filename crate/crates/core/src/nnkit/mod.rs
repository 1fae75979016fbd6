//! A small from-scratch neural toolkit: MLP decoder, Adam, gradient checking,
//! synthetic data and the supervised / distillation training loops.

mod adam;
pub mod data;
pub mod gradcheck;
mod mlp;
mod train;

pub use adam::{adam_step, AdamState};
pub use data::{LinearTruth, Sample, SyntheticDataset, SyntheticSpec};
pub use mlp::{Activation, Forward, Layer, MlpModel};
pub use train::{
    output_rms, train_distilled, train_distilled_from, train_supervised, train_supervised_from, ModelConfig,
    TrainConfig, TrainLog, TrainOutcome,
};
