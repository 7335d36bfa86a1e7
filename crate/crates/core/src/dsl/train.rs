use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::encoder::{Encoder, EncoderConfig};
use super::loss::{degradation_extraction_loss_grad, naive_loss_grad, patch_batch_loss_grad, LossGrad};
use crate::data_io::checkpoint::{read_checkpoint, write_checkpoint};
use crate::data_io::LoadedDataset;
use crate::degradations::{build_set_r, build_set_s, Family};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{Adam, Graph};
use crate::rng::{derive_labeled, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Dual-set learning: synthetic Set S against real Set R.
    Dsl,
    /// Two crops of one image are positives, crops of other images negatives.
    Patch,
    /// Synthetic Set S only; same family across sources is positive.
    Naive,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Dsl, Regime::Patch, Regime::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Dsl => "dsl",
            Regime::Patch => "patch",
            Regime::Naive => "naive",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime `{s}` (expected dsl, patch or naive)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedEncoder {
    pub encoder: Encoder,
    pub regime: Regime,
    /// `(iteration, loss)` in iteration order.
    pub log: Vec<(usize, f64)>,
}

impl TrainedEncoder {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (it, l) in &self.log {
            s.push_str(&format!("{it},{l:?}\n"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let meta = json!({
            "kind": "degradation_encoder",
            "regime": self.regime,
            "config": self.encoder.config,
            "iterations": self.log.len(),
            "param_hash": self.encoder.params.content_hash(),
            "loss_log": self.log,
        });
        let arrays = self.encoder.params.named_arrays();
        write_checkpoint(path, meta, &arrays)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let field = |k: &str| {
            ck.metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        if field("kind")? != json!("degradation_encoder") {
            return Err(Error::Checkpoint("not a degradation encoder checkpoint".into()));
        }
        let config: EncoderConfig = serde_json::from_value(field("config")?)?;
        let regime: Regime = serde_json::from_value(field("regime")?)?;
        let log: Vec<(usize, f64)> = serde_json::from_value(field("loss_log")?)?;
        let mut encoder = Encoder::new(config)?;
        encoder.params.load_named(&ck.arrays)?;
        Ok(Self { encoder, regime, log })
    }
}

fn check_size(images: &[ImageBuffer], side: usize, what: &str) -> Result<()> {
    for img in images {
        if img.height() != side || img.width() != side {
            return Err(Error::ShapeMismatch {
                expected: format!("{side}x{side} {what}"),
                got: format!("{}x{}", img.height(), img.width()),
            });
        }
    }
    Ok(())
}

/// Training batch for one iteration: images plus the loss over their representations.
struct Batch {
    images: Vec<ImageBuffer>,
    loss: Box<dyn Fn(&[Vec<f64>]) -> Result<LossGrad>>,
}

fn dsl_batch(cfg: &EncoderConfig, pool: &[ImageBuffer], real: &LoadedDataset, seed: u64) -> Result<Batch> {
    let mut rng = rng_for(seed, "dsl_batch", 0);
    let source = pool.choose(&mut rng).ok_or(Error::InsufficientImages { needed: 1, available: 0 })?;
    let set_s = build_set_s(source, derive_labeled(seed, "set_s", 0))?;
    let mut keep: Vec<usize> = (0..set_s.members.len()).collect();
    keep.shuffle(&mut rng);
    keep.truncate(cfg.m);
    keep.sort_unstable();
    let set_r = build_set_r(real, derive_labeled(seed, "set_r", 0), cfg.n)?;
    let mut images: Vec<ImageBuffer> = keep.iter().map(|&i| set_s.members[i].0.clone()).collect();
    images.extend(set_r.members.into_iter().map(|(img, _)| img));
    let (m, theta, include) = (cfg.m, cfg.temperature, cfg.include_positive);
    Ok(Batch {
        images,
        loss: Box::new(move |reps| {
            let lg = degradation_extraction_loss_grad(&reps[..m], &reps[m..], theta, include)?;
            let mut grads = lg.grads;
            let mut flat = std::mem::take(&mut grads[0]);
            flat.append(&mut grads[1]);
            Ok(LossGrad {
                loss: lg.loss,
                grads: vec![flat],
            })
        }),
    })
}

fn patch_batch(cfg: &EncoderConfig, real: &LoadedDataset, seed: u64) -> Result<Batch> {
    let mut rng = rng_for(seed, "patch_batch", 0);
    let count = cfg.n.min(real.len());
    if count < 2 {
        return Err(Error::InsufficientImages {
            needed: 2,
            available: real.len(),
        });
    }
    let picks: Vec<usize> = (0..real.len()).collect::<Vec<_>>().choose_multiple(&mut rng, count).copied().collect();
    let p = cfg.patch_size;
    let side = cfg.input_size;
    let mut images = Vec::with_capacity(2 * count);
    for i in picks {
        for _ in 0..2 {
            let x0 = rng.random_range(0..=side - p);
            let y0 = rng.random_range(0..=side - p);
            images.push(real.images[i].crop(x0, y0, p, p)?);
        }
    }
    let (theta, include) = (cfg.temperature, cfg.include_positive);
    Ok(Batch {
        images,
        loss: Box::new(move |reps| patch_batch_loss_grad(reps, theta, include)),
    })
}

fn naive_batch(cfg: &EncoderConfig, pool: &[ImageBuffer], seed: u64) -> Result<Batch> {
    let mut rng = rng_for(seed, "naive_batch", 0);
    // match the dual-set batch size as closely as whole Set S groups allow
    let sources = ((cfg.m + cfg.n) / cfg.m).max(2);
    let mut families: Vec<usize> = (0..Family::ALL.len()).collect();
    families.shuffle(&mut rng);
    families.truncate(cfg.m);
    families.sort_unstable();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for k in 0..sources {
        let source = pool.choose(&mut rng).ok_or(Error::InsufficientImages { needed: 1, available: 0 })?;
        let set_s = build_set_s(source, derive_labeled(seed, "set_s", k as u64))?;
        for &f in &families {
            images.push(set_s.members[f].0.clone());
            labels.push(f);
        }
    }
    let theta = cfg.temperature;
    Ok(Batch {
        images,
        loss: Box::new(move |reps| naive_loss_grad(reps, &labels, theta)),
    })
}

/// Trains a freshly initialized encoder. `real` stands in for the real-world
/// manifest; it is unused by the naive regime.
pub fn train_encoder(
    regime: Regime,
    clean_pool: &[ImageBuffer],
    real: &LoadedDataset,
    config: EncoderConfig,
) -> Result<TrainedEncoder> {
    let encoder = Encoder::new(config)?;
    train_encoder_from(encoder, regime, clean_pool, real)
}

/// Continues training `encoder` for `encoder.config.iterations` steps.
pub fn train_encoder_from(
    mut encoder: Encoder,
    regime: Regime,
    clean_pool: &[ImageBuffer],
    real: &LoadedDataset,
) -> Result<TrainedEncoder> {
    let cfg = encoder.config.clone();
    cfg.validate()?;
    if regime != Regime::Patch && clean_pool.is_empty() {
        return Err(Error::InsufficientImages { needed: 1, available: 0 });
    }
    check_size(clean_pool, cfg.input_size, "clean image")?;
    if regime != Regime::Naive {
        check_size(&real.images, cfg.input_size, "manifest image")?;
    }
    let mut opt = Adam::new(&encoder.params, cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let seed = derive_labeled(cfg.seed, regime.name(), it as u64);
        let batch = match regime {
            Regime::Dsl => dsl_batch(&cfg, clean_pool, real, seed)?,
            Regime::Patch => patch_batch(&cfg, real, seed)?,
            Regime::Naive => naive_batch(&cfg, clean_pool, seed)?,
        };
        let refs: Vec<&ImageBuffer> = batch.images.iter().collect();
        let mut g = Graph::new();
        let x = g.input(Encoder::batch_tensor(&refs)?);
        let (z, stats) = encoder.forward(&mut g, x, true);
        let reps: Vec<Vec<f64>> = g
            .value(z)
            .data
            .chunks_exact(cfg.repr_dim)
            .map(<[f64]>::to_vec)
            .collect();
        let lg = (batch.loss)(&reps)?;
        if !lg.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let seed_grad: Vec<f64> = lg.grads[0].concat();
        let grads = g.backward(z, seed_grad);
        let pg = g.param_grads(&grads);
        if pg.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        opt.step(&mut encoder.params, &pg);
        encoder.update_running_stats(&stats);
        log.push((it, lg.loss));
    }
    Ok(TrainedEncoder { encoder, regime, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{DatasetManifest, Gender, ManifestRecord, SkinTone, Split};
    use crate::degradations::{apply_degradation, sample_recipe};
    use crate::face::FaceSpec;

    const SIDE: usize = 32;

    fn fixture(n_real: usize) -> (Vec<ImageBuffer>, LoadedDataset) {
        let pool: Vec<ImageBuffer> = (0..10).map(|i| FaceSpec::random(i).render(SIDE, SIDE)).collect();
        let mut records = Vec::new();
        let mut images = Vec::new();
        for i in 0..n_real {
            let face = FaceSpec::random(100 + i as u64).render(SIDE, SIDE);
            let fam = Family::BENCHMARK[i % 6];
            let (img, mos) = if i == 0 {
                (face, 0.95)
            } else {
                (apply_degradation(&face, &sample_recipe(fam, i as u64).unwrap()).unwrap(), 0.4)
            };
            records.push(ManifestRecord {
                image_path: format!("{i}.png"),
                mos: Some(mos),
                split: Split::Train,
                skin_tone: SkinTone::Unknown,
                gender: Gender::Unknown,
                occluded: false,
                degradation: None,
            });
            images.push(img);
        }
        let m = DatasetManifest::new(".", records).unwrap();
        (pool, LoadedDataset::from_parts(m, images).unwrap())
    }

    fn cfg(iterations: usize, lr: f64) -> EncoderConfig {
        EncoderConfig {
            input_size: SIDE,
            patch_size: 16,
            channels: vec![4, 4, 8, 8, 8, 8],
            mlp_hidden: 16,
            repr_dim: 8,
            learning_rate: lr,
            iterations,
            m: 16,
            n: 8,
            seed: 3,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let (pool, real) = fixture(12);
        for regime in Regime::ALL {
            let before = Encoder::new(cfg(1, 0.0)).unwrap();
            let t = train_encoder(regime, &pool, &real, cfg(1, 0.0)).unwrap();
            assert_eq!(t.encoder.params.content_hash(), before.params.content_hash());
            assert_eq!(t.log.len(), 1);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let (pool, real) = fixture(16);
        for regime in Regime::ALL {
            let t = train_encoder(regime, &pool, &real, cfg(200, 3e-3)).unwrap();
            let head: f64 = t.log[..10].iter().map(|x| x.1).sum::<f64>() / 10.0;
            let tail: f64 = t.log[190..].iter().map(|x| x.1).sum::<f64>() / 10.0;
            assert!(tail < head, "{regime}: {head} -> {tail}");
            assert!(t.log.iter().all(|(_, l)| l.is_finite()));
            if regime == Regime::Dsl {
                let again = train_encoder(regime, &pool, &real, cfg(200, 3e-3)).unwrap();
                assert_eq!(again.log, t.log);
                assert_eq!(again.encoder, t.encoder);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (pool, real) = fixture(12);
        let t = train_encoder(Regime::Dsl, &pool, &real, cfg(3, 1e-3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        t.save(&path).unwrap();
        let back = TrainedEncoder::load(&path).unwrap();
        assert_eq!(back, t);
        assert!(t.loss_csv().lines().count() == 4);
    }

    #[test]
    fn dsl_requires_high_quality_real_image() {
        let (pool, mut real) = fixture(12);
        for r in &mut real.manifest.records {
            r.mos = Some(0.5);
        }
        assert!(matches!(
            train_encoder(Regime::Dsl, &pool, &real, cfg(1, 1e-3)),
            Err(Error::InsufficientHighQuality)
        ));
    }
}
