//! Landmark-guided, degradation-conditioned face quality regression.
//!
//! A crop is tokenized, reweighted by channel attention, refined by windowed
//! self-attention and conditioned on the frozen degradation representation
//! through cross-attention. Two heads then predict a quality score and a
//! confidence per region; the confidence head also sees the pooled landmark
//! encoding of the crop. The crop's quality is the confidence-weighted mean of
//! the regional scores, and an image's quality the mean over its crops.

mod infer;
mod model;
mod train;

pub use infer::{
    aggregate_score, charbonnier_loss, crop_layout, export_confidence_map, image_crops, image_mos_graph, predict_patches, score_image,
    score_image_with_rep, ConfidenceMap, PatchPrediction, QualityPrediction, Rect, RegionalGrid,
};
pub use model::{window_groups, ForwardOut, GfiqaModel, LayerIds, ModelConfig};
pub use train::{evaluate_gfiqa, train_gfiqa, train_gfiqa_from, training_batch, GfiqaSample, TrainBatch, TrainedGfiqa};

#[cfg(test)]
mod tests;
