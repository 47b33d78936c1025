//! Adversarial training with per-player diversity penalties.

mod losses;
mod model;
mod train;

pub use losses::{d_loss, d_loss_grads, g_loss, g_loss_grad, GeneratorLoss, PROB_CLAMP};
pub use model::{Architecture, GanModel, Regularizer};
pub use train::{
    build_model, derive_seeds, latent_batch, regularized_layer_count, sample, train, train_step,
    MetricsRecord, TrainConfig, TrainObserver, TrainOutcome,
};
