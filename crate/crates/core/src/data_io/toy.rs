//! Procedural toy datasets with known degradation labels and MOS.
//!
//! "Real-style" images differ from the synthetic Set S degradations in two
//! ways that real photographs do: the degradation is strongest on the face and
//! fades towards the background, and a mild per-channel colour cast is applied.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::manifest::{DatasetManifest, LoadedDataset, ManifestRecord, Split};
use crate::degradations::{apply_degradation, camera_degradation, recipe_at_strength, Family, Recipe};
use crate::error::{Error, Result};
use crate::face::FaceSpec;
use crate::image::ImageBuffer;
use crate::landmarks::{synthetic_landmark_provider, write_landmarks_jsonl, LandmarkRecord, LandmarkSet};
use crate::rng::{derive_labeled, rng_for};

pub const MIN_TOY_IMAGES: usize = 10;
pub const LANDMARK_FILE: &str = "landmarks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyOptions {
    pub size: usize,
    pub families: Vec<Family>,
    /// Probability that an image is left undegraded.
    pub clean_fraction: f64,
    /// Degrade through the capture pipeline and blend with a face mask
    /// instead of applying the synthetic recipe uniformly.
    pub real_style: bool,
    /// Half-width of the uniform annotator noise added to `1 - strength`.
    pub mos_noise: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            size: 64,
            families: Family::BENCHMARK.to_vec(),
            clean_fraction: 0.1,
            real_style: true,
            mos_noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub record: ManifestRecord,
    pub image: ImageBuffer,
    pub clean: ImageBuffer,
    pub face: FaceSpec,
    pub landmarks: LandmarkSet,
    pub strength: f64,
    /// Synthetic recipe at `strength`; real-style pixels come from the
    /// capture pipeline with the same family and strength instead.
    pub recipe: Recipe,
}

/// Per-pixel blend weight: 1 on the face, easing to `floor` in the background.
pub fn face_mask(face: &FaceSpec, height: usize, width: usize, floor: f64) -> Vec<f32> {
    let side = height.max(width) as f64;
    let (cx, cy) = face.center;
    let (rx, ry) = (face.radii.0 * 1.15, face.radii.1 * 1.15);
    let mut out = Vec::with_capacity(height * width);
    for py in 0..height {
        for px in 0..width {
            let x = (px as f64 + 0.5) / side;
            let y = (py as f64 + 0.5) / side;
            let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
            // smoothstep from the ellipse edge out to 1.6x its radius
            let t = ((d - 1.0) / 0.6).clamp(0.0, 1.0);
            let s = 1.0 - t * t * (3.0 - 2.0 * t);
            out.push((floor + (1.0 - floor) * s) as f32);
        }
    }
    out
}

/// Blends a degraded image over its clean source with a face-centred mask and
/// applies a small colour cast.
pub fn real_style(clean: &ImageBuffer, degraded: &ImageBuffer, face: &FaceSpec, seed: u64) -> ImageBuffer {
    let mut rng = rng_for(seed, "real_style", 0);
    let floor = rng.random_range(0.15..0.45);
    let cast: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.95..1.05));
    let mask = face_mask(face, clean.height(), clean.width(), floor);
    let mut out = ImageBuffer::from_fn(clean.height(), clean.width(), |y, x| {
        let m = mask[y * clean.width() + x];
        let (c, d) = (clean.pixel(y, x), degraded.pixel(y, x));
        std::array::from_fn(|i| (m * d[i] + (1.0 - m) * c[i]) * cast[i])
    });
    out.clamp01();
    out
}

fn split_assignment(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "splits", 0));
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Generates `n` labelled samples in memory; the `i`-th is a pure function of
/// `(seed, i, options)` apart from its split.
pub fn toy_samples(n: usize, seed: u64, opts: &ToyOptions) -> Result<Vec<ToySample>> {
    if n < MIN_TOY_IMAGES {
        return Err(Error::InsufficientImages {
            needed: MIN_TOY_IMAGES,
            available: n,
        });
    }
    if opts.families.is_empty() || opts.families.contains(&Family::Clean) {
        return Err(Error::InvalidConfig("toy families must be non-empty degraded families".into()));
    }
    let splits = split_assignment(n, seed);
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, "toy_sample", i as u64);
            let face = FaceSpec::random(derive_labeled(seed, "toy_face", i as u64));
            let clean = face.render(opts.size, opts.size);
            let is_clean = rng.random_bool(opts.clean_fraction);
            let family = opts.families[rng.random_range(0..opts.families.len())];
            let strength = if is_clean { 0.0 } else { rng.random_range(0.0..1.0) };
            let recipe = if is_clean {
                Recipe::clean()
            } else {
                recipe_at_strength(family, strength, rng.random())?
            };
            let image = if opts.real_style && !is_clean {
                let captured = camera_degradation(&clean, family, strength, rng.random())?;
                real_style(&clean, &captured, &face, rng.random())
            } else {
                apply_degradation(&clean, &recipe)?
            };
            let noise = rng.random_range(-opts.mos_noise..=opts.mos_noise);
            let record = ManifestRecord {
                image_path: format!("images/img_{i:05}.png"),
                mos: Some((1.0 - strength + noise).clamp(0.0, 1.0)),
                split: splits[i],
                skin_tone: face.skin_tone,
                gender: face.gender,
                occluded: face.occluder.is_some(),
                degradation: Some(recipe.family),
            };
            let landmarks = synthetic_landmark_provider(&face);
            Ok(ToySample {
                record,
                image,
                clean,
                face,
                landmarks,
                strength,
                recipe,
            })
        })
        .collect()
}

/// Writes images, `manifest.jsonl` and `landmarks.jsonl` under `out_dir`.
pub fn write_toy_dataset(samples: &[ToySample], out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("images"))?;
    let mut lm = Vec::with_capacity(samples.len());
    for s in samples {
        s.image.save_png(out_dir.join(&s.record.image_path))?;
        lm.push(LandmarkRecord {
            image_id: s.record.image_path.clone(),
            landmarks: s.landmarks.entries.clone(),
        });
    }
    let manifest = DatasetManifest::new(out_dir, samples.iter().map(|s| s.record.clone()).collect())?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    write_landmarks_jsonl(fs::File::create(out_dir.join(LANDMARK_FILE))?, &lm)?;
    Ok(manifest)
}

pub fn generate_toy_dataset(n: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    write_toy_dataset(&toy_samples(n, seed, &ToyOptions::default())?, out_dir)
}

/// In-memory dataset view of generated samples.
pub fn loaded_from_samples(samples: &[ToySample]) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::new(".", samples.iter().map(|s| s.record.clone()).collect())?;
    LoadedDataset::from_parts(manifest, samples.iter().map(|s| s.image.clone()).collect())
}

/// Degradation-retrieval benchmark: Set S sources, a real-style manifest that
/// doubles as the retrieval gallery, and held-out real-style queries on faces
/// never seen in training, balanced over the benchmark families.
#[derive(Clone, Debug)]
pub struct RetrievalBenchmark {
    /// The generated training faces behind `real`.
    pub samples: Vec<ToySample>,
    pub clean_pool: Vec<ImageBuffer>,
    pub real: LoadedDataset,
    pub gallery: Vec<(ImageBuffer, Family)>,
    pub queries: Vec<(ImageBuffer, Family)>,
}

/// Queries cycle through `opts.families`; the training faces follow `opts`.
pub fn retrieval_benchmark(n_faces: usize, n_queries: usize, opts: &ToyOptions, seed: u64) -> Result<RetrievalBenchmark> {
    if n_queries >= n_faces {
        return Err(Error::InvalidConfig(format!(
            "{n_queries} queries leave no training faces out of {n_faces}"
        )));
    }
    let samples = toy_samples(n_faces - n_queries, derive_labeled(seed, "bench_train", 0), opts)?;
    let size = opts.size;
    let clean_pool = samples.iter().map(|s| s.clean.clone()).collect();
    let gallery = samples
        .iter()
        .filter(|s| s.recipe.family != Family::Clean)
        .map(|s| (s.image.clone(), s.recipe.family))
        .collect();
    let real = loaded_from_samples(&samples)?;
    let queries = (0..n_queries)
        .map(|i| {
            let mut rng = rng_for(seed, "bench_query", i as u64);
            let face = FaceSpec::random(derive_labeled(seed, "bench_query_face", i as u64));
            let clean = face.render(size, size);
            let family = opts.families[i % opts.families.len()];
            // near-zero strengths are invisible and carry no retrievable label
            let strength = rng.random_range(0.2..1.0);
            let captured = camera_degradation(&clean, family, strength, rng.random())?;
            Ok((real_style(&clean, &captured, &face, rng.random()), family))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalBenchmark {
        samples,
        clean_pool,
        real,
        gallery,
        queries,
    })
}
