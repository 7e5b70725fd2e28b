//! Probabilistic pose autoencoder: dual-quaternion encoder, pose decoder and
//! the reconstruction, FK, KL and continuity losses.

mod loss;
mod model;
mod train;

pub use loss::{continuity_loss, kld, loss_fk, loss_q, sample_latent};
pub use model::{IdentityDecoder, LatentLayout, PoseDecoder, PoseVae, VaeConfig};
pub use train::{
    continue_training, evaluate_losses, reconstruction_error, train_vae, EpochLog, TrainingLog, VaeLossWeights,
    VaeTrainConfig,
};
