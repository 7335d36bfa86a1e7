//! Reverse-mode autodiff tape over dense f64 tensors.
//!
//! Each op stores what its backward pass needs. A [`Graph`] is built per
//! forward pass and dropped afterwards; parameters enter through
//! [`Graph::param`], which memoizes so gradients for a shared parameter
//! accumulate into one slot.

use std::collections::HashMap;
use std::rc::Rc;

use super::gemm::{gemm, Mat};
use super::params::{ParamId, ParamSet};
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One attention window: query rows attend over key/value rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnGroup {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GlobalAvgPool(Var),
    NchwToTokens(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: Rc<Vec<AttnGroup>>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
    SegmentMean(Var, usize),
    SegmentScale(Var, Var),
    AddTiled(Var, Var),
    ConcatCols(Var, Var),
    ConfidenceAggregate {
        scores: Var,
        conf: Var,
        weights: Vec<f64>,
        sig: Vec<f64>,
    },
    MeanAll(Var),
    Charbonnier {
        pred: Var,
        target: Vec<f64>,
        eps: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(ps.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        assert_eq!(s.len(), 2, "expected a matrix, got shape {s:?}");
        (s[0], s[1])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims2(a);
        let (k2, m) = self.dims2(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; n * m];
        gemm(
            Mat::new(&self.value(a).data, n, k),
            Mat::new(&self.value(b).data, k, m),
            &mut out,
            0.0,
        );
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.dims2(a);
        assert_eq!(self.value(bias).data.len(), m);
        let b = &self.value(bias).data;
        let mut out = self.value(a).data.clone();
        for row in out.chunks_exact_mut(m) {
            row.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        self.push(Tensor::new(vec![n, m], out), Op::AddRow(a, bias))
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let out: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out), Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let out: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(t, Op::LeakyRelu(a, slope))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        self.push(t, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv input channels");
        assert_eq!(ws[3], k);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let ckk = c * k * k;
        let hw = ho * wo;
        let mut col = vec![0.0; ckk * hw];
        let mut out = vec![0.0; n * o * hw];
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        for s in 0..n {
            let img = &xv[s * c * h * wd..(s + 1) * c * h * wd];
            im2col(img, c, h, wd, k, stride, pad, ho, wo, &mut col);
            let dst = &mut out[s * o * hw..(s + 1) * o * hw];
            for (oc, row) in dst.chunks_exact_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[oc]);
            }
            gemm(Mat::new(wv, o, ckk), Mat::new(&col, ckk, hw), dst, 1.0);
        }
        self.push(
            Tensor::new(vec![n, o, ho, wo], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Training-mode batch norm over `[n, c, h, w]`; also returns the batch mean
    /// and unbiased variance per channel for running-statistic updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xs = self.shape(x).to_vec();
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let m = (n * plane) as f64;
        let xv = &self.value(x).data;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                mean[ch] += xv[base..base + plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                var[ch] += xv[base..base + plane]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize_channels(x, gamma, beta, &mean, &inv_std);
        let unbiased = var.iter().map(|v| v * m / (m - 1.0).max(1.0)).collect();
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        (v, mean, unbiased)
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Var {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize_channels(x, gamma, beta, mean, &inv_std);
        self.push(
            out,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    fn normalize_channels(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> (Tensor, Vec<f64>) {
        let xs = self.shape(x).to_vec();
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        (Tensor::new(xs, out), xhat)
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let plane = xs[2] * xs[3];
        let out: Vec<f64> = self
            .value(x)
            .data
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        self.push(Tensor::new(vec![xs[0], xs[1]], out), Op::GlobalAvgPool(x))
    }

    /// `[n, c, h, w] -> [n * h * w, c]`, tokens in raster order per sample.
    pub fn nchw_to_tokens(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; xv.len()];
        for s in 0..n {
            for ch in 0..c {
                for p in 0..plane {
                    out[(s * plane + p) * c + ch] = xv[(s * c + ch) * plane + p];
                }
            }
        }
        self.push(Tensor::new(vec![n * plane, c], out), Op::NchwToTokens(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (n, e) = self.dims2(x);
        let xv = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; n * e];
        let mut out = vec![0.0; n * e];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * e..(r + 1) * e];
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..e {
                let h = (row[j] - mean) * is;
                xhat[r * e + j] = h;
                out[r * e + j] = g[j] * h + b[j];
            }
        }
        self.push(
            Tensor::new(vec![n, e], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention restricted to `groups`.
    /// Every query row must appear in exactly one group.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Rc<Vec<AttnGroup>>, heads: usize) -> Var {
        let (tq, e) = self.dims2(q);
        assert_eq!(self.dims2(k).1, e);
        assert_eq!(self.dims2(v), self.dims2(k));
        assert_eq!(e % heads, 0, "embedding not divisible by heads");
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = &self.value(q).data;
        let kv = &self.value(k).data;
        let vv = &self.value(v).data;
        let mut out = vec![0.0; tq * e];
        let mut covered = vec![false; tq];
        let mut probs = Vec::with_capacity(groups.len() * heads);
        for g in groups.iter() {
            for &qi in &g.queries {
                assert!(!covered[qi], "query {qi} in more than one group");
                covered[qi] = true;
            }
            let nk = g.keys.len();
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; g.queries.len() * nk];
                for (a, &qi) in g.queries.iter().enumerate() {
                    let qrow = &qv[qi * e + off..qi * e + off + dh];
                    let row = &mut p[a * nk..(a + 1) * nk];
                    for (j, &kj) in g.keys.iter().enumerate() {
                        let krow = &kv[kj * e + off..kj * e + off + dh];
                        row[j] = scale * qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(row);
                    let orow = &mut out[qi * e + off..qi * e + off + dh];
                    for (j, &kj) in g.keys.iter().enumerate() {
                        let vrow = &vv[kj * e + off..kj * e + off + dh];
                        orow.iter_mut().zip(vrow).for_each(|(o, x)| *o += row[j] * x);
                    }
                }
                probs.push(p);
            }
        }
        assert!(covered.iter().all(|&c| c), "every query must belong to a group");
        self.push(
            Tensor::new(vec![tq, e], out),
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            },
        )
    }

    /// Every attention node recorded so far, in creation order.
    pub fn attention_nodes(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Attention { .. }))
            .map(Var)
            .collect()
    }

    /// Attention probabilities of an attention node: one row per (group, head, query).
    pub fn attention_rows(&self, v: Var) -> Option<Vec<&[f64]>> {
        match &self.nodes[v.0].op {
            Op::Attention { groups, heads, probs, .. } => {
                let mut rows = Vec::new();
                for (gi, g) in groups.iter().enumerate() {
                    for h in 0..*heads {
                        rows.extend(probs[gi * heads + h].chunks_exact(g.keys.len()));
                    }
                }
                Some(rows)
            }
            _ => None,
        }
    }

    /// Mean over consecutive row segments: `[s * t, e] -> [s, e]`.
    pub fn segment_mean(&mut self, x: Var, segments: usize) -> Var {
        let (rows, e) = self.dims2(x);
        assert_eq!(rows % segments, 0);
        let t = rows / segments;
        let xv = &self.value(x).data;
        let mut out = vec![0.0; segments * e];
        for s in 0..segments {
            for r in 0..t {
                let row = &xv[(s * t + r) * e..(s * t + r + 1) * e];
                out[s * e..(s + 1) * e].iter_mut().zip(row).for_each(|(o, v)| *o += v / t as f64);
            }
        }
        self.push(Tensor::new(vec![segments, e], out), Op::SegmentMean(x, segments))
    }

    /// Row-segment-wise gating: `x[s * t + r, j] * g[s, j]`.
    pub fn segment_scale(&mut self, x: Var, g: Var) -> Var {
        let (rows, e) = self.dims2(x);
        let (segments, e2) = self.dims2(g);
        assert_eq!(e, e2);
        let t = rows / segments;
        let gv = &self.value(g).data;
        let mut out = self.value(x).data.clone();
        for (r, row) in out.chunks_exact_mut(e).enumerate() {
            let gs = &gv[(r / t) * e..(r / t + 1) * e];
            row.iter_mut().zip(gs).for_each(|(o, g)| *o *= g);
        }
        self.push(Tensor::new(vec![rows, e], out), Op::SegmentScale(x, g))
    }

    /// Adds `p: [t, e]` to every length-`t` segment of `x: [s * t, e]`.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Var {
        let (rows, e) = self.dims2(x);
        let (t, e2) = self.dims2(p);
        assert_eq!(e, e2);
        assert_eq!(rows % t, 0);
        let pv = &self.value(p).data;
        let mut out = self.value(x).data.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o += pv[i % (t * e)];
        }
        self.push(Tensor::new(vec![rows, e], out), Op::AddTiled(x, p))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (n, ea) = self.dims2(a);
        let (n2, eb) = self.dims2(b);
        assert_eq!(n, n2);
        let av = &self.value(a).data;
        let bv = &self.value(b).data;
        let mut out = Vec::with_capacity(n * (ea + eb));
        for r in 0..n {
            out.extend_from_slice(&av[r * ea..(r + 1) * ea]);
            out.extend_from_slice(&bv[r * eb..(r + 1) * eb]);
        }
        self.push(Tensor::new(vec![n, ea + eb], out), Op::ConcatCols(a, b))
    }

    /// Per segment of `t` rows: `sum_t softmax(conf)_t * sigmoid(score_t)`.
    /// `scores`, `conf`: `[s * t, 1]`; output `[s]`.
    pub fn confidence_aggregate(&mut self, scores: Var, conf: Var, segments: usize) -> Var {
        let sv = &self.value(scores).data;
        let cv = &self.value(conf).data;
        assert_eq!(sv.len(), cv.len());
        let t = sv.len() / segments;
        let sig: Vec<f64> = sv.iter().map(|&x| sigmoid(x)).collect();
        let mut weights = cv.clone();
        let mut out = vec![0.0; segments];
        for s in 0..segments {
            let w = &mut weights[s * t..(s + 1) * t];
            softmax_in_place(w);
            out[s] = w.iter().zip(&sig[s * t..(s + 1) * t]).map(|(a, b)| a * b).sum();
        }
        self.push(
            Tensor::new(vec![segments], out),
            Op::ConfidenceAggregate {
                scores,
                conf,
                weights,
                sig,
            },
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let d = &self.value(x).data;
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::new(vec![1], vec![m]), Op::MeanAll(x))
    }

    /// Mean Charbonnier penalty `sqrt((p - t)^2 + eps^2)`.
    pub fn charbonnier(&mut self, pred: Var, target: &[f64], eps: f64) -> Var {
        let p = &self.value(pred).data;
        assert_eq!(p.len(), target.len());
        let l = p
            .iter()
            .zip(target)
            .map(|(a, b)| ((a - b).powi(2) + eps * eps).sqrt())
            .sum::<f64>()
            / p.len() as f64;
        self.push(
            Tensor::new(vec![1], vec![l]),
            Op::Charbonnier {
                pred,
                target: target.to_vec(),
                eps,
            },
        )
    }

    /// Backpropagates `seed` (same shape as `root`) through the tape.
    pub fn backward(&self, root: Var, seed: Vec<f64>) -> Gradients {
        assert_eq!(seed.len(), self.value(root).data.len(), "seed shape");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    /// Gradients of every parameter that entered this graph; zeros when unreached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = grads
                    .wrt(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; self.value(v).data.len()]);
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn backward_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let len = |v: Var| self.value(v).data.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(*a);
                let m = self.dims2(*b).1;
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                let ga = acc(grads, *a, n * k);
                gemm(Mat::new(gy, n, m), Mat::t(bv, k, m), ga, 1.0);
                let gb = acc(grads, *b, k * m);
                gemm(Mat::t(av, n, k), Mat::new(gy, n, m), gb, 1.0);
            }
            Op::AddRow(a, bias) => {
                let m = len(*bias);
                acc(grads, *a, gy.len()).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                let gb = acc(grads, *bias, m);
                for row in gy.chunks_exact(m) {
                    gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(grads, *v, gy.len()).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
            }
            Op::Mul(a, b) => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                let ga = acc(grads, *a, gy.len());
                for j in 0..gy.len() {
                    ga[j] += gy[j] * bv[j];
                }
                let gb = acc(grads, *b, gy.len());
                for j in 0..gy.len() {
                    gb[j] += gy[j] * av[j];
                }
            }
            Op::Scale(a, s) => {
                acc(grads, *a, gy.len()).iter_mut().zip(gy).for_each(|(g, d)| *g += s * d);
            }
            Op::LeakyRelu(a, slope) => {
                let av = &self.value(*a).data;
                let ga = acc(grads, *a, gy.len());
                for j in 0..gy.len() {
                    ga[j] += if av[j] > 0.0 { gy[j] } else { slope * gy[j] };
                }
            }
            Op::Gelu(a) => {
                let av = &self.value(*a).data;
                let ga = acc(grads, *a, gy.len());
                for j in 0..gy.len() {
                    ga[j] += gy[j] * gelu_grad(av[j]);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                let ga = acc(grads, *a, gy.len());
                for j in 0..gy.len() {
                    ga[j] += gy[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let ys = &node.value.shape;
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let (ho, wo) = (ys[2], ys[3]);
                let ckk = c * k * k;
                let hw = ho * wo;
                let wv = &self.value(*w).data;
                {
                    let gb = acc(grads, *b, o);
                    for s in 0..n {
                        for oc in 0..o {
                            let base = (s * o + oc) * hw;
                            gb[oc] += gy[base..base + hw].iter().sum::<f64>();
                        }
                    }
                }
                {
                    // im2col is recomputed rather than stored to keep the tape small
                    let xv = &self.value(*x).data;
                    let mut col = vec![0.0; ckk * hw];
                    let gw = acc(grads, *w, o * ckk);
                    for s in 0..n {
                        let dy = &gy[s * o * hw..(s + 1) * o * hw];
                        let img = &xv[s * c * h * wd..(s + 1) * c * h * wd];
                        im2col(img, c, h, wd, k, *stride, *pad, ho, wo, &mut col);
                        gemm(Mat::new(dy, o, hw), Mat::t(&col, ckk, hw), gw, 1.0);
                    }
                }
                let mut dcol = vec![0.0; ckk * hw];
                let gx = acc(grads, *x, n * c * h * wd);
                for s in 0..n {
                    let dy = &gy[s * o * hw..(s + 1) * o * hw];
                    gemm(Mat::t(wv, o, ckk), Mat::new(dy, o, hw), &mut dcol, 0.0);
                    let dimg = &mut gx[s * c * h * wd..(s + 1) * c * h * wd];
                    col2im(&dcol, c, h, wd, k, *stride, *pad, ho, wo, dimg);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xs = self.shape(*x).to_vec();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let m = (n * plane) as f64;
                let g = &self.value(*gamma).data;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for j in base..base + plane {
                            sum_dy[ch] += gy[j];
                            sum_dy_xhat[ch] += gy[j] * xhat[j];
                        }
                    }
                }
                {
                    let gg = acc(grads, *gamma, c);
                    gg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b);
                }
                {
                    let gbeta = acc(grads, *beta, c);
                    gbeta.iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b);
                }
                let gx = acc(grads, *x, gy.len());
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        let k = g[ch] * inv_std[ch] / m;
                        for j in base..base + plane {
                            gx[j] += k * (m * gy[j] - sum_dy[ch] - xhat[j] * sum_dy_xhat[ch]);
                        }
                    }
                }
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xs = self.shape(*x).to_vec();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let g = &self.value(*gamma).data;
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                {
                    let gx = acc(grads, *x, gy.len());
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            for j in base..base + plane {
                                gx[j] += gy[j] * g[ch] * inv_std[ch];
                                gg[ch] += gy[j] * xhat[j];
                                gb[ch] += gy[j];
                            }
                        }
                    }
                }
                acc(grads, *gamma, c).iter_mut().zip(&gg).for_each(|(a, b)| *a += b);
                acc(grads, *beta, c).iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x).to_vec();
                let plane = xs[2] * xs[3];
                let gx = acc(grads, *x, xs.iter().product());
                for (j, chunk) in gx.chunks_exact_mut(plane).enumerate() {
                    let d = gy[j] / plane as f64;
                    chunk.iter_mut().for_each(|g| *g += d);
                }
            }
            Op::NchwToTokens(x) => {
                let xs = self.shape(*x).to_vec();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let gx = acc(grads, *x, gy.len());
                for s in 0..n {
                    for ch in 0..c {
                        for p in 0..plane {
                            gx[(s * c + ch) * plane + p] += gy[(s * plane + p) * c + ch];
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, e) = self.dims2(*x);
                let g = &self.value(*gamma).data;
                let mut gg = vec![0.0; e];
                let mut gb = vec![0.0; e];
                {
                    let gx = acc(grads, *x, n * e);
                    let mut dxhat = vec![0.0; e];
                    for r in 0..n {
                        let dy = &gy[r * e..(r + 1) * e];
                        let xh = &xhat[r * e..(r + 1) * e];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..e {
                            gg[j] += dy[j] * xh[j];
                            gb[j] += dy[j];
                            dxhat[j] = dy[j] * g[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / e as f64;
                        for j in 0..e {
                            gx[r * e + j] += k * (e as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
                acc(grads, *gamma, e).iter_mut().zip(&gg).for_each(|(a, b)| *a += b);
                acc(grads, *beta, e).iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            }
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            } => {
                let (tq, e) = self.dims2(*q);
                let tk = self.dims2(*k).0;
                let dh = e / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let qv = &self.value(*q).data;
                let kv = &self.value(*k).data;
                let vv = &self.value(*v).data;
                let mut gq = vec![0.0; tq * e];
                let mut gk = vec![0.0; tk * e];
                let mut gv = vec![0.0; tk * e];
                for (gi, g) in groups.iter().enumerate() {
                    let nk = g.keys.len();
                    for h in 0..*heads {
                        let off = h * dh;
                        let p = &probs[gi * heads + h];
                        let mut dp = vec![0.0; nk];
                        for (a, &qi) in g.queries.iter().enumerate() {
                            let prow = &p[a * nk..(a + 1) * nk];
                            let dout = &gy[qi * e + off..qi * e + off + dh];
                            for (j, &kj) in g.keys.iter().enumerate() {
                                let vrow = &vv[kj * e + off..kj * e + off + dh];
                                dp[j] = dout.iter().zip(vrow).map(|(x, y)| x * y).sum();
                                for d in 0..dh {
                                    gv[kj * e + off + d] += prow[j] * dout[d];
                                }
                            }
                            let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for (j, &kj) in g.keys.iter().enumerate() {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for d in 0..dh {
                                    gq[qi * e + off + d] += ds * kv[kj * e + off + d];
                                    gk[kj * e + off + d] += ds * qv[qi * e + off + d];
                                }
                            }
                        }
                    }
                }
                for (var, gsrc) in [(q, gq), (k, gk), (v, gv)] {
                    let n = gsrc.len();
                    acc(grads, *var, n).iter_mut().zip(&gsrc).for_each(|(a, b)| *a += b);
                }
            }
            Op::SegmentMean(x, segments) => {
                let (rows, e) = self.dims2(*x);
                let t = rows / segments;
                let gx = acc(grads, *x, rows * e);
                for r in 0..rows {
                    let s = r / t;
                    for j in 0..e {
                        gx[r * e + j] += gy[s * e + j] / t as f64;
                    }
                }
            }
            Op::SegmentScale(x, g) => {
                let (rows, e) = self.dims2(*x);
                let segments = self.dims2(*g).0;
                let t = rows / segments;
                let xv = &self.value(*x).data;
                let gv = &self.value(*g).data;
                {
                    let gx = acc(grads, *x, rows * e);
                    for r in 0..rows {
                        for j in 0..e {
                            gx[r * e + j] += gy[r * e + j] * gv[(r / t) * e + j];
                        }
                    }
                }
                let gg = acc(grads, *g, segments * e);
                for r in 0..rows {
                    for j in 0..e {
                        gg[(r / t) * e + j] += gy[r * e + j] * xv[r * e + j];
                    }
                }
            }
            Op::AddTiled(x, p) => {
                let pl = len(*p);
                acc(grads, *x, gy.len()).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                let gp = acc(grads, *p, pl);
                for (i, d) in gy.iter().enumerate() {
                    gp[i % pl] += d;
                }
            }
            Op::ConcatCols(a, b) => {
                let (n, ea) = self.dims2(*a);
                let eb = self.dims2(*b).1;
                {
                    let ga = acc(grads, *a, n * ea);
                    for r in 0..n {
                        for j in 0..ea {
                            ga[r * ea + j] += gy[r * (ea + eb) + j];
                        }
                    }
                }
                let gb = acc(grads, *b, n * eb);
                for r in 0..n {
                    for j in 0..eb {
                        gb[r * eb + j] += gy[r * (ea + eb) + ea + j];
                    }
                }
            }
            Op::ConfidenceAggregate {
                scores,
                conf,
                weights,
                sig,
            } => {
                let segments = gy.len();
                let t = sig.len() / segments;
                let out = &node.value.data;
                {
                    let gs = acc(grads, *scores, sig.len());
                    for j in 0..sig.len() {
                        let s = j / t;
                        gs[j] += gy[s] * weights[j] * sig[j] * (1.0 - sig[j]);
                    }
                }
                let gc = acc(grads, *conf, sig.len());
                for j in 0..sig.len() {
                    let s = j / t;
                    gc[j] += gy[s] * weights[j] * (sig[j] - out[s]);
                }
            }
            Op::MeanAll(x) => {
                let n = len(*x);
                acc(grads, *x, n).iter_mut().for_each(|g| *g += gy[0] / n as f64);
            }
            Op::Charbonnier { pred, target, eps } => {
                let p = &self.value(*pred).data;
                let n = p.len();
                let gp = acc(grads, *pred, n);
                for j in 0..n {
                    let d = p[j] - target[j];
                    gp[j] += gy[0] * d / (d * d + eps * eps).sqrt() / n as f64;
                }
            }
        }
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize, col: &mut [f64]) {
    let hw = ho * wo;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * hw;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &img[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize, img: &mut [f64]) {
    let hw = ho * wo;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * hw;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ch * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += col[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
