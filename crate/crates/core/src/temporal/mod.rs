//! Transformer that predicts upcoming latents from a window of past frames,
//! run every `n` frames to give the optimizer a temporal target.

mod model;
mod state;
mod train;

pub use model::{TemporalConfig, TemporalPredictor};
pub use state::{PredictorState, StepFeatures};
pub use train::{evaluate_one_step, limb_noise, train_temporal, TemporalEpoch, TemporalTrainConfig};

/// `(j, p)` for frame `i`: the predictor step `ceil(i / n)` and the refresh
/// step `W_f * floor(j / W_f)` it belongs to.
pub fn indices(i: u64, n: u64, wf: u64) -> (u64, u64) {
    let j = i.div_ceil(n);
    (j, wf * (j / wf))
}
