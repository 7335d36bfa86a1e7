use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{he_normal, trunc_normal, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::rng_for;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LEAKY_SLOPE: f64 = 0.01;
/// Images per forward pass at inference.
const ENCODE_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Side of the square input the encoder is trained and queried on.
    pub input_size: usize,
    /// Output channels of the six 3x3 conv blocks; odd blocks (1, 3, 5) use stride 2.
    pub channels: Vec<usize>,
    pub mlp_hidden: usize,
    pub repr_dim: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub temperature: f64,
    /// Set S members used per iteration (all 16 by default).
    pub m: usize,
    /// Set R size per iteration.
    pub n: usize,
    /// Crop side for the patch regime.
    pub patch_size: usize,
    /// Keep the positive term in the contrastive denominators (dual-set and
    /// patch regimes); the literal forms are unbounded below.
    pub include_positive: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: vec![8, 8, 16, 16, 32, 32],
            mlp_hidden: 64,
            repr_dim: 128,
            learning_rate: 3e-5,
            iterations: 200,
            temperature: 1.0,
            m: 16,
            n: 256,
            patch_size: 32,
            include_positive: false,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels.len() != 6 || self.channels.contains(&0) {
            return bad(format!("encoder needs six non-zero channel widths, got {:?}", self.channels));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(2..=16).contains(&self.m) {
            return bad(format!("m must lie in [2, 16], got {}", self.m));
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.input_size < 8 || self.patch_size < 8 || self.patch_size > self.input_size {
            return bad(format!(
                "input_size {} and patch_size {} must satisfy 8 <= patch_size <= input_size",
                self.input_size, self.patch_size
            ));
        }
        if self.repr_dim == 0 || self.mlp_hidden == 0 {
            return bad("repr_dim and mlp_hidden must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: usize,
    running_var: usize,
    stride: usize,
}

/// Six conv/batch-norm/leaky-ReLU blocks, global average pooling, and a
/// two-layer MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    blocks: Vec<Block>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Per-block batch statistics from a training-mode pass.
pub type BatchStats = Vec<(Vec<f64>, Vec<f64>)>;

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, "encoder_init", 0);
        let mut ps = ParamSet::new();
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (i, &cout) in config.channels.iter().enumerate() {
            let w = ps.add(format!("conv{i}.weight"), he_normal(&[cout, cin, 3, 3], cin * 9, &mut rng));
            let b = ps.add(format!("conv{i}.bias"), Tensor::zeros(vec![cout]));
            let gamma = ps.add(format!("bn{i}.gamma"), Tensor::full(vec![cout], 1.0));
            let beta = ps.add(format!("bn{i}.beta"), Tensor::zeros(vec![cout]));
            let running_mean = ps.add_buffer(format!("bn{i}.running_mean"), Tensor::zeros(vec![cout]));
            let running_var = ps.add_buffer(format!("bn{i}.running_var"), Tensor::full(vec![cout], 1.0));
            blocks.push(Block {
                w,
                b,
                gamma,
                beta,
                running_mean,
                running_var,
                stride: if i % 2 == 1 { 2 } else { 1 },
            });
            cin = cout;
        }
        let h = config.mlp_hidden;
        let fc1 = (
            ps.add("fc1.weight", he_normal(&[cin, h], cin, &mut rng)),
            ps.add("fc1.bias", Tensor::zeros(vec![h])),
        );
        let fc2 = (
            ps.add("fc2.weight", trunc_normal(&[h, config.repr_dim], (1.0 / h as f64).sqrt(), &mut rng)),
            ps.add("fc2.bias", Tensor::zeros(vec![config.repr_dim])),
        );
        Ok(Self {
            config,
            params: ps,
            blocks,
            fc1,
            fc2,
        })
    }

    /// Stacks images into a centred `[n, 3, h, w]` tensor.
    pub fn batch_tensor(images: &[&ImageBuffer]) -> Result<Tensor> {
        let (h, w) = (images[0].height(), images[0].width());
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.height() != h || img.width() != w {
                return Err(Error::ShapeMismatch {
                    expected: format!("{h}x{w}"),
                    got: format!("{}x{}", img.height(), img.width()),
                });
            }
            data.extend(img.to_chw().into_iter().map(|v| v - 0.5));
        }
        Ok(Tensor::new(vec![images.len(), 3, h, w], data))
    }

    /// Builds the forward pass on `g`. Training mode normalizes with batch
    /// statistics and returns them; inference uses the running statistics.
    pub fn forward(&self, g: &mut Graph, x: Var, train: bool) -> (Var, BatchStats) {
        let mut h = x;
        let mut stats = Vec::new();
        for blk in &self.blocks {
            let w = g.param(&self.params, blk.w);
            let b = g.param(&self.params, blk.b);
            let gamma = g.param(&self.params, blk.gamma);
            let beta = g.param(&self.params, blk.beta);
            h = g.conv2d(h, w, b, blk.stride, 1);
            h = if train {
                let (y, mean, var) = g.batch_norm(h, gamma, beta, BN_EPS);
                stats.push((mean, var));
                y
            } else {
                let mean = &self.params.buffer(blk.running_mean).data;
                let var = &self.params.buffer(blk.running_var).data;
                g.channel_affine(h, gamma, beta, mean, var, BN_EPS)
            };
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let pooled = g.global_avg_pool(h);
        let (w1, b1) = (g.param(&self.params, self.fc1.0), g.param(&self.params, self.fc1.1));
        let (w2, b2) = (g.param(&self.params, self.fc2.0), g.param(&self.params, self.fc2.1));
        let z = g.linear(pooled, w1, b1);
        let z = g.leaky_relu(z, LEAKY_SLOPE);
        (g.linear(z, w2, b2), stats)
    }

    /// Exponential moving average of batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (blk, (mean, var)) in self.blocks.iter().zip(stats) {
            for (buf, batch) in [(blk.running_mean, mean), (blk.running_var, var)] {
                let r = &mut self.params.buffer_mut(buf).data;
                for (r, b) in r.iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    /// Inference-mode representations, one row per image. Any image size works
    /// here; [`encode_degradation`] enforces the configured input size.
    pub fn encode_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(ENCODE_CHUNK) {
            let mut g = Graph::new();
            let x = g.input(Self::batch_tensor(chunk)?);
            let (z, _) = self.forward(&mut g, x, false);
            out.extend(g.value(z).data.chunks_exact(self.config.repr_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn check_input(&self, image: &ImageBuffer) -> Result<()> {
        let s = self.config.input_size;
        if image.height() != s || image.width() != s {
            return Err(Error::ShapeMismatch {
                expected: format!("{s}x{s}"),
                got: format!("{}x{}", image.height(), image.width()),
            });
        }
        Ok(())
    }

    /// Representations for whole images of the configured size.
    pub fn encode_images(&self, images: &[ImageBuffer]) -> Result<Vec<Vec<f64>>> {
        for img in images {
            self.check_input(img)?;
        }
        let refs: Vec<&ImageBuffer> = images.iter().collect();
        self.encode_batch(&refs)
    }
}

/// A degradation representation and the image it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationRepresentation {
    pub vector: Vec<f64>,
    pub source_id: String,
}

pub fn encode_degradation(encoder: &Encoder, image: &ImageBuffer) -> Result<Vec<f64>> {
    encoder.check_input(image)?;
    Ok(encoder.encode_batch(&[image])?.remove(0))
}
