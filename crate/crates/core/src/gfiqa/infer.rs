use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::GfiqaModel;
use crate::dsl::{encode_degradation, Encoder};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::landmarks::{landmarks_in_patch, pool_landmark_encoding, LandmarkSet};
use crate::nn::{sigmoid, softmax_in_place, Graph, Var};

/// Patches per forward pass at inference.
const SCORE_CHUNK: usize = 32;

/// Pixel rectangle `(x0, y0, w, h)`.
pub type Rect = (usize, usize, usize, usize);

/// Raw per-region outputs of one patch, in token raster order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionalGrid {
    /// Tokens per side.
    pub side: usize,
    pub scores: Vec<f64>,
    pub confidences: Vec<f64>,
}

impl RegionalGrid {
    pub fn new(side: usize, scores: Vec<f64>, confidences: Vec<f64>) -> Result<Self> {
        if side == 0 || scores.len() != side * side || confidences.len() != side * side {
            return Err(Error::ShapeMismatch {
                expected: format!("{side}x{side} regional grid"),
                got: format!("{} scores, {} confidences", scores.len(), confidences.len()),
            });
        }
        Ok(Self {
            side,
            scores,
            confidences,
        })
    }

    /// Softmax of the raw confidences.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.confidences.clone();
        softmax_in_place(&mut w);
        w
    }
}

/// `sum_t softmax(conf)_t * sigmoid(score_t)`.
pub fn aggregate_score(grid: &RegionalGrid) -> f64 {
    grid.weights()
        .iter()
        .zip(&grid.scores)
        .map(|(w, &s)| w * sigmoid(s))
        .sum()
}

/// `sqrt((pred - gt)^2 + eps^2)`.
pub fn charbonnier_loss(pred: f64, gt: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    Ok(((pred - gt).powi(2) + eps * eps).sqrt())
}

/// Crop origins along one axis: evenly spread from 0 to `len - p`, enough
/// of them that consecutive crops overlap or touch.
fn axis_origins(len: usize, p: usize) -> Vec<usize> {
    let count = len.div_ceil(p).max(1);
    if count == 1 {
        return vec![0];
    }
    let span = len - p;
    (0..count).map(|i| (i * span + (count - 1) / 2) / (count - 1)).collect()
}

/// Four corner crops plus the centre crop; larger images get a denser corner
/// lattice so every pixel stays covered. Duplicates are removed, so a
/// `P x P` image yields a single crop.
pub fn crop_layout(height: usize, width: usize, p: usize) -> Result<Vec<Rect>> {
    if height < p || width < p {
        return Err(Error::ImageTooSmall {
            side: height.min(width),
            patch: p,
        });
    }
    let mut rects = Vec::new();
    for &y in &axis_origins(height, p) {
        for &x in &axis_origins(width, p) {
            rects.push((x, y, p, p));
        }
    }
    let centre = ((width - p) / 2, (height - p) / 2, p, p);
    if !rects.contains(&centre) {
        rects.push(centre);
    }
    Ok(rects)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub rect: Rect,
    pub grid: RegionalGrid,
    pub mos: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityPrediction {
    pub mos: f64,
    pub height: usize,
    pub width: usize,
    pub per_patch: Vec<PatchPrediction>,
}

/// Scores patches that share nothing but the model; inputs are index-aligned.
pub fn predict_patches(
    model: &GfiqaModel,
    patches: &[&ImageBuffer],
    deg_reps: &[Vec<f64>],
    landmark_vecs: &[Vec<f64>],
) -> Result<Vec<(RegionalGrid, f64)>> {
    let side = model.config.grid();
    let mut out = Vec::with_capacity(patches.len());
    for start in (0..patches.len()).step_by(SCORE_CHUNK) {
        let end = (start + SCORE_CHUNK).min(patches.len());
        let mut g = Graph::new();
        let f = model.forward(&mut g, &patches[start..end], &deg_reps[start..end], &landmark_vecs[start..end])?;
        let t = side * side;
        let scores = &g.value(f.scores).data;
        let conf = &g.value(f.confidences).data;
        let mos = &g.value(f.mos).data;
        for i in 0..end - start {
            let grid = RegionalGrid::new(side, scores[i * t..(i + 1) * t].to_vec(), conf[i * t..(i + 1) * t].to_vec())?;
            out.push((grid, mos[i]));
        }
    }
    Ok(out)
}

/// Crops, landmark subsets and pooled landmark vectors for every crop of an image.
pub fn image_crops(
    model: &GfiqaModel,
    image: &ImageBuffer,
    landmarks: &LandmarkSet,
) -> Result<Vec<(Rect, ImageBuffer, Vec<f64>)>> {
    let p = model.config.patch_size;
    let dims = (image.width(), image.height());
    crop_layout(image.height(), image.width(), p)?
        .into_iter()
        .map(|rect| {
            let patch = image.crop(rect.0, rect.1, rect.2, rect.3)?;
            let local = landmarks_in_patch(landmarks, rect, dims)?;
            let vec = pool_landmark_encoding(&local, model.config.landmark_bands)?;
            Ok((rect, patch, vec))
        })
        .collect()
}

/// Differentiable crop-mean quality of one image, built on `g`.
pub fn image_mos_graph(
    g: &mut Graph,
    model: &GfiqaModel,
    image: &ImageBuffer,
    deg_rep: &[f64],
    landmarks: &LandmarkSet,
) -> Result<Var> {
    let crops = image_crops(model, image, landmarks)?;
    let patches: Vec<&ImageBuffer> = crops.iter().map(|c| &c.1).collect();
    let reps = vec![deg_rep.to_vec(); crops.len()];
    let vecs: Vec<Vec<f64>> = crops.iter().map(|c| c.2.clone()).collect();
    let out = model.forward(g, &patches, &reps, &vecs)?;
    Ok(g.mean_all(out.mos))
}

/// Scores an image from a degradation representation already computed on it.
pub fn score_image_with_rep(
    model: &GfiqaModel,
    image: &ImageBuffer,
    deg_rep: &[f64],
    landmarks: &LandmarkSet,
) -> Result<QualityPrediction> {
    let crops = image_crops(model, image, landmarks)?;
    let patches: Vec<&ImageBuffer> = crops.iter().map(|c| &c.1).collect();
    let reps = vec![deg_rep.to_vec(); crops.len()];
    let vecs: Vec<Vec<f64>> = crops.iter().map(|c| c.2.clone()).collect();
    let preds = predict_patches(model, &patches, &reps, &vecs)?;
    let per_patch: Vec<PatchPrediction> = crops
        .iter()
        .zip(preds)
        .map(|(c, (grid, mos))| PatchPrediction { rect: c.0, grid, mos })
        .collect();
    let mos = per_patch.iter().map(|p| p.mos).sum::<f64>() / per_patch.len() as f64;
    Ok(QualityPrediction {
        mos,
        height: image.height(),
        width: image.width(),
        per_patch,
    })
}

/// Degradation representation once on the whole image, then every crop
/// scored with its own landmark subset; the image score is the crop mean.
pub fn score_image(
    model: &GfiqaModel,
    encoder: &Encoder,
    image: &ImageBuffer,
    landmarks: &LandmarkSet,
) -> Result<QualityPrediction> {
    let p = model.config.patch_size;
    if image.height() < p || image.width() < p {
        return Err(Error::ImageTooSmall {
            side: image.height().min(image.width()),
            patch: p,
        });
    }
    let rep = encode_degradation(encoder, image)?;
    score_image_with_rep(model, image, &rep, landmarks)
}

/// Per-pixel confidence: each patch's softmax weights spread over the pixels
/// of their token cell, averaged where patches overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub fn export_confidence_map(prediction: &QualityPrediction) -> ConfidenceMap {
    let (h, w) = (prediction.height, prediction.width);
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for p in &prediction.per_patch {
        let (x0, y0, pw, ph) = p.rect;
        let side = p.grid.side;
        let weights = p.grid.weights();
        for dy in 0..ph {
            let ty = dy * side / ph;
            for dx in 0..pw {
                let tx = dx * side / pw;
                let i = (y0 + dy) * w + x0 + dx;
                sum[i] += weights[ty * side + tx];
                count[i] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    ConfidenceMap {
        height: h,
        width: w,
        data,
    }
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    height: usize,
    width: usize,
    dtype: String,
    order: String,
}

impl ConfidenceMap {
    /// Writes `<stem>.png` (scaled by the map maximum), `<stem>.f32` (raw
    /// little-endian, row-major) and `<stem>.json` (dimensions).
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let max = self.data.iter().cloned().fold(0.0f64, f64::max);
        let mut png = image::GrayImage::new(self.width as u32, self.height as u32);
        for (i, px) in png.pixels_mut().enumerate() {
            let v = if max > 0.0 { self.data[i] / max } else { 0.0 };
            px.0 = [(v * 255.0).round().clamp(0.0, 255.0) as u8];
        }
        png.save(stem.with_extension("png"))?;
        let raw: Vec<u8> = self.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        fs::write(stem.with_extension("f32"), raw)?;
        let header = RawHeader {
            height: self.height,
            width: self.width,
            dtype: "f32".into(),
            order: "row-major little-endian".into(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn read_raw(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let header: RawHeader = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("f32"))?;
        if bytes.len() != header.height * header.width * 4 {
            return Err(Error::LengthMismatch {
                left: header.height * header.width * 4,
                right: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            height: header.height,
            width: header.width,
            data,
        })
    }
}
