//! Class weighting, weighted cross-entropy and the baseline pixel classifier.

mod baseline;
mod features;
mod loss;
mod weights;

pub use baseline::{predict, predict_tile, train_baseline, BaselineParams, Hyperparams, LogitRaster};
pub use features::{extract_features, FeatureConfig, Features};
pub use loss::{softmax, weighted_ce_loss, LossOutput, PixelProbabilities, PROB_FLOOR};
pub use weights::{compute_weights, compute_weights_present, ClassWeights, WeightingStrategy};
