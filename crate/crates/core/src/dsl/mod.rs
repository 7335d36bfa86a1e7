//! Degradation representation learning.
//!
//! The encoder maps a whole face image to a vector describing how it is
//! degraded rather than what it shows. Three training regimes share it: the
//! dual-set objective, a patch-contrastive baseline and a synthetic-only
//! baseline.

mod encoder;
mod loss;
mod train;

pub use encoder::{encode_degradation, BatchStats, DegradationRepresentation, Encoder, EncoderConfig};
pub use loss::{
    contrastive_loss, contrastive_loss_grad, degradation_extraction_loss, degradation_extraction_loss_grad,
    naive_loss, naive_loss_grad, patch_based_loss, patch_based_loss_grad, patch_batch_loss_grad, similarity,
    soft_proximity_map, LossGrad,
};
pub use train::{train_encoder, train_encoder_from, Regime, TrainedEncoder};
