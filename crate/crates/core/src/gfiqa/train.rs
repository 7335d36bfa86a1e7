use std::path::Path;

use rand::Rng;
use serde_json::json;

use super::infer::score_image_with_rep;
use super::model::{GfiqaModel, ModelConfig};
use crate::data_io::checkpoint::{read_checkpoint, write_checkpoint};
use crate::dsl::{encode_degradation, Encoder};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::landmarks::{landmarks_in_patch, pool_landmark_encoding, LandmarkSet};
use crate::metrics::EvalReport;
use crate::nn::{Adam, Graph};
use crate::rng::rng_for;

/// One labelled image with its landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct GfiqaSample {
    pub image: ImageBuffer,
    pub landmarks: LandmarkSet,
    pub mos: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedGfiqa {
    pub model: GfiqaModel,
    /// `(iteration, loss)` in iteration order.
    pub log: Vec<(usize, f64)>,
    /// Content hash of the frozen encoder the model was trained against.
    pub encoder_hash: String,
}

impl TrainedGfiqa {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (it, l) in &self.log {
            s.push_str(&format!("{it},{l:?}\n"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let meta = json!({
            "kind": "gfiqa_model",
            "config": self.model.config,
            "deg_dim": self.model.deg_dim,
            "iterations": self.log.len(),
            "param_hash": self.model.params.content_hash(),
            "encoder_hash": self.encoder_hash,
            "loss_log": self.log,
        });
        write_checkpoint(path, meta, &self.model.params.named_arrays())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let field = |k: &str| {
            ck.metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        if field("kind")? != json!("gfiqa_model") {
            return Err(Error::Checkpoint("not a quality model checkpoint".into()));
        }
        let config: ModelConfig = serde_json::from_value(field("config")?)?;
        let deg_dim: usize = serde_json::from_value(field("deg_dim")?)?;
        let log = serde_json::from_value(field("loss_log")?)?;
        let encoder_hash = serde_json::from_value(field("encoder_hash")?)?;
        let mut model = GfiqaModel::new(config, deg_dim)?;
        model.params.load_named(&ck.arrays)?;
        Ok(Self {
            model,
            log,
            encoder_hash,
        })
    }
}

pub fn train_gfiqa(samples: &[GfiqaSample], encoder: &Encoder, config: ModelConfig) -> Result<TrainedGfiqa> {
    let model = GfiqaModel::new(config, encoder.config.repr_dim)?;
    train_gfiqa_from(model, samples, encoder)
}

/// Crops drawn for one optimization step.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    /// Sample index behind each crop.
    pub indices: Vec<usize>,
    pub patches: Vec<ImageBuffer>,
    pub landmark_vecs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub flipped: Vec<bool>,
}

/// Random `P x P` crops, each horizontally flipped with probability 1/2
/// together with its landmarks; a pure function of `(config.seed, iteration)`.
pub fn training_batch(samples: &[GfiqaSample], cfg: &ModelConfig, iteration: usize) -> Result<TrainBatch> {
    let p = cfg.patch_size;
    let mut rng = rng_for(cfg.seed, "gfiqa_batch", iteration as u64);
    let mut b = TrainBatch {
        indices: Vec::with_capacity(cfg.batch),
        patches: Vec::with_capacity(cfg.batch),
        landmark_vecs: Vec::with_capacity(cfg.batch),
        targets: Vec::with_capacity(cfg.batch),
        flipped: Vec::with_capacity(cfg.batch),
    };
    for _ in 0..cfg.batch {
        let i = rng.random_range(0..samples.len());
        let s = &samples[i];
        let (h, w) = (s.image.height(), s.image.width());
        let rect = (rng.random_range(0..=w - p), rng.random_range(0..=h - p), p, p);
        let mut patch = s.image.crop(rect.0, rect.1, p, p)?;
        let mut local = landmarks_in_patch(&s.landmarks, rect, (w, h))?;
        let flip = rng.random_bool(0.5);
        if flip {
            patch = patch.flip_horizontal();
            local = local.flip_horizontal();
        }
        b.indices.push(i);
        b.patches.push(patch);
        b.landmark_vecs.push(pool_landmark_encoding(&local, cfg.landmark_bands)?);
        b.targets.push(s.mos);
        b.flipped.push(flip);
    }
    Ok(b)
}

/// Minimizes the mean Charbonnier loss of per-crop quality over random
/// `P x P` crops with horizontal flips. The encoder is only read: its
/// representations are computed once per image up front.
pub fn train_gfiqa_from(mut model: GfiqaModel, samples: &[GfiqaSample], encoder: &Encoder) -> Result<TrainedGfiqa> {
    let cfg = model.config.clone();
    if samples.is_empty() {
        return Err(Error::InsufficientImages { needed: 1, available: 0 });
    }
    let p = cfg.patch_size;
    for s in samples {
        if s.image.height() < p || s.image.width() < p {
            return Err(Error::ImageTooSmall {
                side: s.image.height().min(s.image.width()),
                patch: p,
            });
        }
    }
    let reps = samples
        .iter()
        .map(|s| encode_degradation(encoder, &s.image))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = training_batch(samples, &cfg, it)?;
        let batch_reps: Vec<Vec<f64>> = batch.indices.iter().map(|&i| reps[i].clone()).collect();
        let (patches, vecs, targets) = (batch.patches, batch.landmark_vecs, batch.targets);
        let refs: Vec<&ImageBuffer> = patches.iter().collect();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &refs, &batch_reps, &vecs)?;
        let loss = g.charbonnier(out.mos, &targets, cfg.charbonnier_eps);
        let value = g.value(loss).data[0];
        let grads = g.backward(loss, vec![1.0]);
        let pg = g.param_grads(&grads);
        if !value.is_finite() || pg.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        adam.step(&mut model.params, &pg);
        log.push((it, value));
    }
    Ok(TrainedGfiqa {
        model,
        log,
        encoder_hash: encoder.params.content_hash(),
    })
}

/// Scores every sample with the full crop-and-average pipeline and correlates
/// the predictions with the ground truth.
pub fn evaluate_gfiqa(
    model: &GfiqaModel,
    encoder: &Encoder,
    samples: &[GfiqaSample],
    split: &str,
) -> Result<(Vec<f64>, EvalReport)> {
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let rep = encode_degradation(encoder, &s.image)?;
        preds.push(score_image_with_rep(model, &s.image, &rep, &s.landmarks)?.mos);
    }
    let actual: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let report = EvalReport::compute(&actual, &preds, split)?;
    Ok((preds, report))
}
