use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{he_normal, trunc_normal, AttnGroup, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::rng_for;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side P of the square training/inference crop.
    pub patch_size: usize,
    /// Side of the square pixel block behind each token.
    pub token_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub refine_blocks: usize,
    /// Window side in tokens; odd-numbered refine blocks use shifted windows.
    pub window: usize,
    pub decoder_blocks: usize,
    pub head_hidden: usize,
    /// MLP width inside transformer blocks, as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub landmark_vocab: usize,
    pub landmark_bands: usize,
    /// When false the confidence head sees a zero landmark vector.
    pub use_landmarks: bool,
    pub charbonnier_eps: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            token_size: 4,
            embed_dim: 32,
            heads: 4,
            refine_blocks: 2,
            window: 4,
            decoder_blocks: 1,
            head_hidden: 64,
            mlp_ratio: 2,
            landmark_vocab: crate::landmarks::DEFAULT_VOCAB,
            landmark_bands: crate::landmarks::DEFAULT_BANDS,
            use_landmarks: true,
            charbonnier_eps: 1e-3,
            learning_rate: 5e-4,
            iterations: 300,
            batch: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.token_size == 0 || self.patch_size == 0 || self.patch_size % self.token_size != 0 {
            return bad(format!(
                "patch_size {} must be a positive multiple of token_size {}",
                self.patch_size, self.token_size
            ));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} must be divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.window == 0 || self.head_hidden == 0 || self.mlp_ratio == 0 || self.batch == 0 {
            return bad("window, head_hidden, mlp_ratio and batch must be positive".into());
        }
        if self.landmark_vocab == 0 || self.landmark_bands == 0 {
            return bad("landmark_vocab and landmark_bands must be positive".into());
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::NonPositiveEpsilon(self.charbonnier_eps));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// Tokens per side of a patch.
    pub fn grid(&self) -> usize {
        self.patch_size / self.token_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn landmark_dim(&self) -> usize {
        2 * self.landmark_bands + 2
    }
}

type Lin = (ParamId, ParamId);
type Norm = (ParamId, ParamId);

#[derive(Clone, Debug, PartialEq)]
struct Attn {
    q: Lin,
    k: Lin,
    v: Lin,
    out: Lin,
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    fc1: Lin,
    fc2: Lin,
}

#[derive(Clone, Debug, PartialEq)]
struct RefineBlock {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    mlp: Mlp,
    shifted: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderBlock {
    ln1: Norm,
    context: Lin,
    attn: Attn,
    ln2: Norm,
    mlp: Mlp,
}

/// Named parameter handles, exposed so tests can pin individual layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerIds {
    pub channel_fc1: (ParamId, ParamId),
    pub channel_fc2: (ParamId, ParamId),
    pub decoder_value: Vec<(ParamId, ParamId)>,
    pub decoder_out: Vec<(ParamId, ParamId)>,
    pub refine_out: Vec<(ParamId, ParamId)>,
    pub refine_fc2: Vec<(ParamId, ParamId)>,
    pub decoder_fc2: Vec<(ParamId, ParamId)>,
}

/// Tokenizer, channel attention, windowed refinement, cross-attention to the
/// degradation representation, and the score / confidence heads.
#[derive(Clone, Debug, PartialEq)]
pub struct GfiqaModel {
    pub config: ModelConfig,
    /// Dimension of the degradation representation this model is conditioned on.
    pub deg_dim: usize,
    pub params: ParamSet,
    tok: Lin,
    pos: ParamId,
    ca1: Lin,
    ca2: Lin,
    refine: Vec<RefineBlock>,
    decoder: Vec<DecoderBlock>,
    ln_f: Norm,
    score: Mlp,
    conf: Mlp,
}

/// Graph handles from one forward pass over `b` patches.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    /// `[b * T, E]` tokens entering the heads.
    pub tokens: Var,
    /// `[b * T, 1]` raw regional scores.
    pub scores: Var,
    /// `[b * T, 1]` raw regional confidences.
    pub confidences: Var,
    /// `[b]` confidence-weighted patch quality.
    pub mos: Var,
}

fn dense(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, zero: bool, rng: &mut impl rand::Rng) -> Lin {
    let w = if zero {
        Tensor::zeros(vec![fan_in, fan_out])
    } else {
        trunc_normal(&[fan_in, fan_out], INIT_STD, rng)
    };
    (ps.add(format!("{name}.weight"), w), ps.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])))
}

fn norm(ps: &mut ParamSet, name: &str, dim: usize) -> Norm {
    (
        ps.add(format!("{name}.gamma"), Tensor::full(vec![dim], 1.0)),
        ps.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
    )
}

fn attn(ps: &mut ParamSet, name: &str, e: usize, kv_in: usize, rng: &mut impl rand::Rng) -> Attn {
    Attn {
        q: dense(ps, &format!("{name}.q"), e, e, false, rng),
        k: dense(ps, &format!("{name}.k"), kv_in, e, false, rng),
        v: dense(ps, &format!("{name}.v"), kv_in, e, false, rng),
        out: dense(ps, &format!("{name}.out"), e, e, true, rng),
    }
}

fn mlp(ps: &mut ParamSet, name: &str, dims: (usize, usize, usize), zero_out: bool, rng: &mut impl rand::Rng) -> Mlp {
    Mlp {
        fc1: dense(ps, &format!("{name}.fc1"), dims.0, dims.1, false, rng),
        fc2: dense(ps, &format!("{name}.fc2"), dims.1, dims.2, zero_out, rng),
    }
}

/// Attention windows over a `grid x grid` token raster for each of `batch`
/// samples. Shifted partitions start half a window early and are clipped at
/// the border, so edge windows are smaller instead of wrapping around.
pub fn window_groups(batch: usize, grid: usize, window: usize, shifted: bool) -> Vec<AttnGroup> {
    let offset = if shifted && window < grid { window / 2 } else { 0 };
    let mut starts = Vec::new();
    let mut s = 0usize;
    if offset > 0 {
        starts.push(0);
        s = window - offset;
    }
    while s < grid {
        starts.push(s);
        s += window;
    }
    starts.dedup();
    let spans: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, starts.get(i + 1).copied().unwrap_or(grid)))
        .collect();
    let t = grid * grid;
    let mut groups = Vec::with_capacity(batch * spans.len() * spans.len());
    for b in 0..batch {
        for &(y0, y1) in &spans {
            for &(x0, x1) in &spans {
                let rows: Vec<usize> = (y0..y1).flat_map(|y| (x0..x1).map(move |x| b * t + y * grid + x)).collect();
                groups.push(AttnGroup {
                    queries: rows.clone(),
                    keys: rows,
                });
            }
        }
    }
    groups
}

impl GfiqaModel {
    pub fn new(config: ModelConfig, deg_dim: usize) -> Result<Self> {
        config.validate()?;
        if deg_dim == 0 {
            return Err(Error::InvalidConfig("degradation representation dimension must be positive".into()));
        }
        let mut rng = rng_for(config.seed, "gfiqa_init", 0);
        let mut ps = ParamSet::new();
        let e = config.embed_dim;
        let t = config.token_size;
        let tok = (
            ps.add("tokenizer.weight", he_normal(&[e, 3, t, t], 3 * t * t, &mut rng)),
            ps.add("tokenizer.bias", Tensor::zeros(vec![e])),
        );
        let pos = ps.add("pos_embed", trunc_normal(&[config.tokens(), e], INIT_STD, &mut rng));
        let r = (e / 4).max(1);
        let ca1 = dense(&mut ps, "channel_attn.fc1", e, r, false, &mut rng);
        let ca2 = dense(&mut ps, "channel_attn.fc2", r, e, false, &mut rng);
        let hidden = e * config.mlp_ratio;
        let refine = (0..config.refine_blocks)
            .map(|i| RefineBlock {
                ln1: norm(&mut ps, &format!("refine{i}.ln1"), e),
                attn: attn(&mut ps, &format!("refine{i}.attn"), e, e, &mut rng),
                ln2: norm(&mut ps, &format!("refine{i}.ln2"), e),
                mlp: mlp(&mut ps, &format!("refine{i}.mlp"), (e, hidden, e), true, &mut rng),
                shifted: i % 2 == 1,
            })
            .collect();
        let decoder = (0..config.decoder_blocks)
            .map(|i| DecoderBlock {
                ln1: norm(&mut ps, &format!("decoder{i}.ln1"), e),
                context: dense(&mut ps, &format!("decoder{i}.context"), deg_dim, e, false, &mut rng),
                attn: attn(&mut ps, &format!("decoder{i}.cross"), e, e, &mut rng),
                ln2: norm(&mut ps, &format!("decoder{i}.ln2"), e),
                mlp: mlp(&mut ps, &format!("decoder{i}.mlp"), (e, hidden, e), true, &mut rng),
            })
            .collect();
        let ln_f = norm(&mut ps, "ln_f", e);
        let h = config.head_hidden;
        let score = mlp(&mut ps, "score_head", (e, h, 1), false, &mut rng);
        let conf = mlp(&mut ps, "confidence_head", (e + config.landmark_dim(), h, 1), false, &mut rng);
        Ok(Self {
            config,
            deg_dim,
            params: ps,
            tok,
            pos,
            ca1,
            ca2,
            refine,
            decoder,
            ln_f,
            score,
            conf,
        })
    }

    pub fn layer_ids(&self) -> LayerIds {
        LayerIds {
            channel_fc1: self.ca1,
            channel_fc2: self.ca2,
            decoder_value: self.decoder.iter().map(|d| d.attn.v).collect(),
            decoder_out: self.decoder.iter().map(|d| d.attn.out).collect(),
            refine_out: self.refine.iter().map(|r| r.attn.out).collect(),
            refine_fc2: self.refine.iter().map(|r| r.mlp.fc2).collect(),
            decoder_fc2: self.decoder.iter().map(|d| d.mlp.fc2).collect(),
        }
    }

    fn lin(&self, g: &mut Graph, x: Var, l: Lin) -> Var {
        let (w, b) = (g.param(&self.params, l.0), g.param(&self.params, l.1));
        g.linear(x, w, b)
    }

    fn ln(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let (gamma, beta) = (g.param(&self.params, n.0), g.param(&self.params, n.1));
        g.layer_norm(x, gamma, beta, LN_EPS)
    }

    fn mlp(&self, g: &mut Graph, x: Var, m: &Mlp) -> Var {
        let h = self.lin(g, x, m.fc1);
        let h = g.gelu(h);
        self.lin(g, h, m.fc2)
    }

    /// `[b, 3, P, P]` centred pixels to `[b * T, E]` tokens with positions added.
    pub fn extract_features(&self, g: &mut Graph, patches: Var) -> Var {
        let (w, b) = (g.param(&self.params, self.tok.0), g.param(&self.params, self.tok.1));
        let x = g.conv2d(patches, w, b, self.config.token_size, 0);
        let x = g.nchw_to_tokens(x);
        let pos = g.param(&self.params, self.pos);
        g.add_tiled(x, pos)
    }

    /// Squeeze over each patch's tokens, bottleneck MLP, sigmoid gate per channel.
    pub fn channel_attention(&self, g: &mut Graph, tokens: Var, batch: usize) -> Var {
        let s = g.segment_mean(tokens, batch);
        let h = self.lin(g, s, self.ca1);
        let h = g.gelu(h);
        let z = self.lin(g, h, self.ca2);
        let gate = g.sigmoid(z);
        g.segment_scale(tokens, gate)
    }

    /// Pre-norm windowed self-attention and MLP blocks.
    pub fn refine(&self, g: &mut Graph, tokens: Var, batch: usize) -> Var {
        let grid = self.config.grid();
        let plain = Rc::new(window_groups(batch, grid, self.config.window, false));
        let shifted = Rc::new(window_groups(batch, grid, self.config.window, true));
        let mut x = tokens;
        for blk in &self.refine {
            let groups = if blk.shifted { shifted.clone() } else { plain.clone() };
            let h = self.ln(g, x, blk.ln1);
            let q = self.lin(g, h, blk.attn.q);
            let k = self.lin(g, h, blk.attn.k);
            let v = self.lin(g, h, blk.attn.v);
            let a = g.attention(q, k, v, groups, self.config.heads);
            let a = self.lin(g, a, blk.attn.out);
            x = g.add(x, a);
            let h = self.ln(g, x, blk.ln2);
            let m = self.mlp(g, h, &blk.mlp);
            x = g.add(x, m);
        }
        x
    }

    /// Tokens attend to the projected degradation representation, a context of length one.
    pub fn cross_attention_decode(&self, g: &mut Graph, tokens: Var, deg: Var, batch: usize) -> Var {
        let t = self.config.tokens();
        let groups: Rc<Vec<AttnGroup>> = Rc::new(
            (0..batch)
                .map(|b| AttnGroup {
                    queries: (b * t..(b + 1) * t).collect(),
                    keys: vec![b],
                })
                .collect(),
        );
        let mut x = tokens;
        for blk in &self.decoder {
            let ctx = self.lin(g, deg, blk.context);
            let h = self.ln(g, x, blk.ln1);
            let q = self.lin(g, h, blk.attn.q);
            let k = self.lin(g, ctx, blk.attn.k);
            let v = self.lin(g, ctx, blk.attn.v);
            let a = g.attention(q, k, v, groups.clone(), self.config.heads);
            let a = self.lin(g, a, blk.attn.out);
            x = g.add(x, a);
            let h = self.ln(g, x, blk.ln2);
            let m = self.mlp(g, h, &blk.mlp);
            x = g.add(x, m);
        }
        x
    }

    /// Score head on the tokens, confidence head on tokens joined with the
    /// per-token landmark rows `[b * T, 2F + 2]`.
    pub fn predict_regional(&self, g: &mut Graph, tokens: Var, landmark_rows: Var) -> (Var, Var) {
        let scores = self.mlp(g, tokens, &self.score);
        let joined = g.concat_cols(tokens, landmark_rows);
        let conf = self.mlp(g, joined, &self.conf);
        (scores, conf)
    }

    /// Repeats each patch's pooled landmark vector over its tokens.
    pub fn landmark_rows(&self, landmark_vecs: &[Vec<f64>]) -> Result<Tensor> {
        let (t, l) = (self.config.tokens(), self.config.landmark_dim());
        let mut data = Vec::with_capacity(landmark_vecs.len() * t * l);
        for v in landmark_vecs {
            if v.len() != l {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    got: v.len(),
                });
            }
            for _ in 0..t {
                if self.config.use_landmarks {
                    data.extend_from_slice(v);
                } else {
                    data.extend(std::iter::repeat_n(0.0, l));
                }
            }
        }
        Ok(Tensor::new(vec![landmark_vecs.len() * t, l], data))
    }

    /// Full forward pass over `patches` (each `P x P`), one degradation
    /// representation and one pooled landmark vector per patch.
    pub fn forward(
        &self,
        g: &mut Graph,
        patches: &[&ImageBuffer],
        deg_reps: &[Vec<f64>],
        landmark_vecs: &[Vec<f64>],
    ) -> Result<ForwardOut> {
        let b = patches.len();
        if b == 0 {
            return Err(Error::InvalidInput("no patches to score".into()));
        }
        if deg_reps.len() != b || landmark_vecs.len() != b {
            return Err(Error::LengthMismatch {
                left: b,
                right: if deg_reps.len() != b { deg_reps.len() } else { landmark_vecs.len() },
            });
        }
        let p = self.config.patch_size;
        for img in patches {
            if img.height() != p || img.width() != p {
                return Err(Error::ShapeMismatch {
                    expected: format!("{p}x{p} patch"),
                    got: format!("{}x{}", img.height(), img.width()),
                });
            }
        }
        let mut deg = Vec::with_capacity(b * self.deg_dim);
        for r in deg_reps {
            if r.len() != self.deg_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.deg_dim,
                    got: r.len(),
                });
            }
            deg.extend_from_slice(r);
        }
        let x = g.input(crate::dsl::Encoder::batch_tensor(patches)?);
        let deg = g.input(Tensor::new(vec![b, self.deg_dim], deg));
        let lm = g.input(self.landmark_rows(landmark_vecs)?);
        let tokens = self.extract_features(g, x);
        let tokens = self.channel_attention(g, tokens, b);
        let tokens = self.refine(g, tokens, b);
        let tokens = self.cross_attention_decode(g, tokens, deg, b);
        let tokens = self.ln(g, tokens, self.ln_f);
        let (scores, confidences) = self.predict_regional(g, tokens, lm);
        let mos = g.confidence_aggregate(scores, confidences, b);
        Ok(ForwardOut {
            tokens,
            scores,
            confidences,
            mos,
        })
    }
}
