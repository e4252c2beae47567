//! Reverse-mode autodiff, layers, optimiser and the training loop.

pub mod adam;
pub mod layers;
pub mod tape;
pub mod model;
pub mod train;

pub use adam::Adam;
pub use model::{Checkpoint, Model, ModelConfig, Nonlinearity};
pub use train::{evaluate_mse, train, Dataset, EpochStats, TrainOptions, TrainOutcome};
