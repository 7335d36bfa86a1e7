use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::dsl::{Encoder, EncoderConfig};
use crate::face::FaceSpec;
use crate::image::ImageBuffer;
use crate::landmarks::{encode_landmark_id, synthetic_landmark_provider, LandmarkSet};
use crate::nn::{sigmoid, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::rng_for;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_size: 16,
        token_size: 8,
        embed_dim: 8,
        heads: 2,
        window: 2,
        head_hidden: 8,
        landmark_bands: 2,
        ..ModelConfig::default()
    }
}

/// Every parameter nudged by noise so zero-initialised layers take part.
fn randomize(ps: &mut ParamSet, seed: u64, std: f64) {
    let mut rng = rng_for(seed, "randomize", 0);
    let ids: Vec<ParamId> = ps.ids().collect();
    for id in ids {
        for v in ps.get_mut(id).data.iter_mut() {
            *v += std * rng.random_range(-1.0..1.0);
        }
    }
}

fn random_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, "rows", 0);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Max relative error between analytic parameter gradients and central
/// differences of `loss(params)`.
fn param_fd_error(ps: &mut ParamSet, loss: &dyn Fn(&ParamSet, &mut Graph) -> Var, only: Option<&[ParamId]>) -> f64 {
    let mut g = Graph::new();
    let root = loss(ps, &mut g);
    let grads = g.backward(root, vec![1.0]);
    let analytic = g.param_grads(&grads);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (id, ga) in analytic {
        if only.is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        for j in 0..ga.len() {
            let orig = ps.get(id).data[j];
            ps.get_mut(id).data[j] = orig + h;
            let mut g1 = Graph::new();
            let r1 = loss(ps, &mut g1);
            let up = g1.value(r1).data[0];
            ps.get_mut(id).data[j] = orig - h;
            let mut g2 = Graph::new();
            let r2 = loss(ps, &mut g2);
            let down = g2.value(r2).data[0];
            ps.get_mut(id).data[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - ga[j]).abs() / fd.abs().max(ga[j].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let (r, c) = (g.shape(x)[0], g.shape(x).get(1).copied().unwrap_or(1));
    let w = g.input(random_rows(r, c, seed));
    let p = g.mul(x, w);
    let m = g.mean_all(p);
    g.scale(m, (r * c) as f64)
}

#[test]
fn config_arithmetic() {
    let spec_desk = ModelConfig {
        patch_size: 96,
        token_size: 8,
        embed_dim: 64,
        ..ModelConfig::default()
    };
    assert_eq!(spec_desk.tokens(), 144);
    assert!(spec_desk.validate().is_ok());
    assert_eq!(ModelConfig::default().landmark_dim(), 14);
    let bad = ModelConfig {
        patch_size: 30,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad_heads = ModelConfig {
        heads: 5,
        ..ModelConfig::default()
    };
    assert!(bad_heads.validate().is_err());
    let bad_eps = ModelConfig {
        charbonnier_eps: 0.0,
        ..ModelConfig::default()
    };
    assert!(matches!(bad_eps.validate(), Err(crate::Error::NonPositiveEpsilon(_))));
}

#[test]
fn features_deterministic_and_channel_sensitive() {
    let model = GfiqaModel::new(ModelConfig::default(), 16).unwrap();
    let face = FaceSpec::random(1).render(32, 32);
    let run = |img: &ImageBuffer| {
        let mut g = Graph::new();
        let x = g.input(Encoder::batch_tensor(&[img]).unwrap());
        let t = model.extract_features(&mut g, x);
        assert_eq!(g.shape(t), &[64, 32]);
        g.value(t).data.clone()
    };
    assert_eq!(run(&face), run(&face));
    let swapped = ImageBuffer::from_fn(32, 32, |y, x| {
        let p = face.pixel(y, x);
        [p[2], p[0], p[1]]
    });
    let (a, b) = (run(&face), run(&swapped));
    assert!(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() > 1e-3);
}

#[test]
fn channel_attention_identity_gate_and_zero_input() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    let ids = model.layer_ids();
    model.params.get_mut(ids.channel_fc2.0).data.iter_mut().for_each(|v| *v = 0.0);
    model.params.get_mut(ids.channel_fc2.1).data.iter_mut().for_each(|v| *v = 40.0);
    let x = random_rows(12, 8, 3);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = model.channel_attention(&mut g, xv, 3);
    assert_eq!(g.value(y).data, x.data);

    let model = GfiqaModel::new(tiny_config(), 4).unwrap();
    let mut g = Graph::new();
    let z = g.input(Tensor::zeros(vec![12, 8]));
    let y = model.channel_attention(&mut g, z, 3);
    assert!(g.value(y).data.iter().all(|&v| v == 0.0));
}

#[test]
fn channel_attention_gradients() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    randomize(&mut model.params, 1, 0.3);
    let x = random_rows(8, 8, 5);
    let m = model.clone();
    let loss = move |ps: &ParamSet, g: &mut Graph| {
        let mut mm = m.clone();
        mm.params = ps.clone();
        let xv = g.input(x.clone());
        let y = mm.channel_attention(g, xv, 2);
        weighted_sum(g, y, 9)
    };
    let ids = model.layer_ids();
    let only = [ids.channel_fc1.0, ids.channel_fc1.1, ids.channel_fc2.0, ids.channel_fc2.1];
    let err = param_fd_error(&mut model.params, &loss, Some(&only));
    assert!(err < 1e-4, "channel attention rel err {err}");

    // input gradient through the gate as well
    let x = random_rows(8, 8, 6);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = model.channel_attention(&mut g, xv, 2);
    let root = weighted_sum(&mut g, y, 9);
    let grads = g.backward(root, vec![1.0]);
    let ga = grads.wrt(xv).unwrap().to_vec();
    for j in 0..x.data.len() {
        let eval = |d: f64| {
            let mut xx = x.clone();
            xx.data[j] += d;
            let mut g = Graph::new();
            let xv = g.input(xx);
            let y = model.channel_attention(&mut g, xv, 2);
            let r = weighted_sum(&mut g, y, 9);
            g.value(r).data[0]
        };
        let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
        assert!((fd - ga[j]).abs() <= 1e-4 * fd.abs().max(ga[j].abs()).max(1e-6));
    }
}

#[test]
fn windows_partition_tokens() {
    for (grid, window) in [(4, 2), (8, 4), (6, 4), (5, 2), (4, 4), (3, 8)] {
        for shifted in [false, true] {
            let groups = window_groups(2, grid, window, shifted);
            let mut seen = vec![0; 2 * grid * grid];
            for gr in &groups {
                assert_eq!(gr.queries, gr.keys);
                assert!(gr.queries.len() <= window * window);
                for &q in &gr.queries {
                    seen[q] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "grid {grid} window {window} shifted {shifted}");
        }
    }
    // shifted 8x8 grid with window 4: edges clipped to 2, interior 4 wide
    let g = window_groups(1, 8, 4, true);
    assert_eq!(g.len(), 9);
    assert_eq!(g[0].queries, vec![0, 1, 8, 9]);
}

#[test]
fn refine_is_identity_at_init() {
    let model = GfiqaModel::new(ModelConfig::default(), 8).unwrap();
    let x = random_rows(2 * 64, 32, 4);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = model.refine(&mut g, xv, 2);
    assert_eq!(g.value(y).data, x.data);
}

fn layer_norm_rows(x: &[f64], e: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.len() / e {
        let row = &x[r * e..(r + 1) * e];
        let mean = row.iter().sum::<f64>() / e as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
        for j in 0..e {
            out[r * e + j] = gamma[j] * (row[j] - mean) / (var + 1e-6).sqrt() + beta[j];
        }
    }
    out
}

fn dense_rows(x: &[f64], fan_in: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let fan_out = b.len();
    let mut out = Vec::new();
    for row in x.chunks_exact(fan_in) {
        for o in 0..fan_out {
            out.push(b[o] + (0..fan_in).map(|i| row[i] * w[i * fan_out + o]).sum::<f64>());
        }
    }
    out
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

#[test]
fn single_window_matches_full_attention_reference() {
    // 4x4 token grid, window covering it: one refine block equals plain
    // multi-head self-attention written out with loops
    let cfg = ModelConfig {
        patch_size: 16,
        token_size: 4,
        embed_dim: 8,
        heads: 2,
        window: 4,
        refine_blocks: 1,
        ..ModelConfig::default()
    };
    let mut model = GfiqaModel::new(cfg, 4).unwrap();
    randomize(&mut model.params, 7, 0.4);
    let x = random_rows(16, 8, 8);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = model.refine(&mut g, xv, 1);
    let got = g.value(y).data.clone();

    let p = |name: &str| {
        let (n, t) = model.params.named_arrays().into_iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(n, name);
        t.data.clone()
    };
    let (e, heads, dh) = (8, 2, 4);
    let h = layer_norm_rows(&x.data, e, &p("refine0.ln1.gamma"), &p("refine0.ln1.beta"));
    let q = dense_rows(&h, e, &p("refine0.attn.q.weight"), &p("refine0.attn.q.bias"));
    let k = dense_rows(&h, e, &p("refine0.attn.k.weight"), &p("refine0.attn.k.bias"));
    let v = dense_rows(&h, e, &p("refine0.attn.v.weight"), &p("refine0.attn.v.bias"));
    let mut att = vec![0.0; 16 * e];
    for hd in 0..heads {
        for i in 0..16 {
            let logits: Vec<f64> = (0..16)
                .map(|j| (0..dh).map(|d| q[i * e + hd * dh + d] * k[j * e + hd * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..16 {
                let w = (logits[j] - mx).exp() / z;
                for d in 0..dh {
                    att[i * e + hd * dh + d] += w * v[j * e + hd * dh + d];
                }
            }
        }
    }
    let proj = dense_rows(&att, e, &p("refine0.attn.out.weight"), &p("refine0.attn.out.bias"));
    let x1: Vec<f64> = x.data.iter().zip(&proj).map(|(a, b)| a + b).collect();
    let h2 = layer_norm_rows(&x1, e, &p("refine0.ln2.gamma"), &p("refine0.ln2.beta"));
    let m1: Vec<f64> = dense_rows(&h2, e, &p("refine0.mlp.fc1.weight"), &p("refine0.mlp.fc1.bias"))
        .into_iter()
        .map(gelu_ref)
        .collect();
    let m2 = dense_rows(&m1, 2 * e, &p("refine0.mlp.fc2.weight"), &p("refine0.mlp.fc2.bias"));
    let want: Vec<f64> = x1.iter().zip(&m2).map(|(a, b)| a + b).collect();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn window_attention_rows_sum_to_one() {
    let mut model = GfiqaModel::new(ModelConfig::default(), 8).unwrap();
    randomize(&mut model.params, 2, 0.2);
    let mut g = Graph::new();
    let x = g.input(random_rows(64, 32, 1));
    let _ = model.refine(&mut g, x, 1);
    let mut checked = 0;
    for v in g.attention_nodes() {
        if let Some(rows) = g.attention_rows(v) {
            for r in rows {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 2 * 4 * 64);
}

#[test]
fn cross_attention_singleton_context() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    randomize(&mut model.params, 3, 0.3);
    let tokens = random_rows(8, 8, 2);
    let run = |m: &GfiqaModel, rep: Vec<f64>| {
        let mut g = Graph::new();
        let t = g.input(tokens.clone());
        let d = g.input(Tensor::new(vec![2, 4], rep));
        let y = m.cross_attention_decode(&mut g, t, d, 2);
        let mut ones = true;
        for v in g.attention_nodes() {
            if let Some(rows) = g.attention_rows(v) {
                ones &= rows.iter().all(|r| r == &[1.0]);
            }
        }
        (g.value(y).data.clone(), ones)
    };
    let (a, ones) = run(&model, vec![0.1, -0.4, 0.3, 0.9, 0.1, -0.4, 0.3, 0.9]);
    assert!(ones);
    let (b, _) = run(&model, vec![-0.8, 0.5, 0.0, 0.2, -0.8, 0.5, 0.0, 0.2]);
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff > 1e-6, "conditioning has no effect");

    // zero value projection and zero MLP output: the decoder passes tokens through
    let ids = model.layer_ids();
    for id in [ids.decoder_value[0].0, ids.decoder_value[0].1, ids.decoder_fc2[0].0, ids.decoder_fc2[0].1] {
        model.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let (c, _) = run(&model, vec![0.1, -0.4, 0.3, 0.9, 0.1, -0.4, 0.3, 0.9]);
    let zero_out = model.params.get(ids.decoder_out[0].1).data.clone();
    let want: Vec<f64> = tokens
        .data
        .iter()
        .enumerate()
        .map(|(i, t)| t + zero_out[i % 8])
        .collect();
    for (x, y) in c.iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn cross_attention_dimension_checked() {
    let model = GfiqaModel::new(tiny_config(), 4).unwrap();
    let img = ImageBuffer::filled(16, 16, [0.5; 3]);
    let mut g = Graph::new();
    let err = model.forward(&mut g, &[&img], &[vec![0.0; 5]], &[vec![0.0; 6]]).unwrap_err();
    assert!(matches!(err, crate::Error::DimensionMismatch { expected: 4, got: 5 }));
}

#[test]
fn heads_shapes_landmarks_and_gradients() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    randomize(&mut model.params, 4, 0.3);
    let tokens = random_rows(8, 8, 3);
    let lm = vec![encode_landmark_id(5, 68, 2).unwrap(), vec![0.0; 4]].concat();
    let lm = [lm[..4].to_vec(), vec![0.3, 0.7]].concat();
    let run = |m: &GfiqaModel, vecs: &[Vec<f64>]| {
        let mut g = Graph::new();
        let t = g.input(tokens.clone());
        let l = g.input(m.landmark_rows(vecs).unwrap());
        let (s, c) = m.predict_regional(&mut g, t, l);
        assert_eq!(g.shape(s), &[8, 1]);
        assert_eq!(g.shape(c), &[8, 1]);
        (g.value(s).data.clone(), g.value(c).data.clone())
    };
    let (s0, c0) = run(&model, &[vec![0.0; 6], vec![0.0; 6]]);
    let (s1, c1) = run(&model, &[lm.clone(), lm.clone()]);
    assert_eq!(s0, s1);
    assert!(c0.iter().zip(&c1).any(|(a, b)| (a - b).abs() > 1e-9));

    let m = model.clone();
    let lm2 = lm.clone();
    let loss = move |ps: &ParamSet, g: &mut Graph| {
        let mut mm = m.clone();
        mm.params = ps.clone();
        let t = g.input(tokens.clone());
        let l = g.input(mm.landmark_rows(&[lm2.clone(), vec![0.0; 6]]).unwrap());
        let (s, c) = mm.predict_regional(g, t, l);
        let a = weighted_sum(g, s, 1);
        let b = weighted_sum(g, c, 2);
        g.add(a, b)
    };
    let head_ids: Vec<ParamId> = model
        .params
        .ids()
        .filter(|&id| model.params.name(id).contains("head"))
        .collect();
    assert_eq!(head_ids.len(), 8);
    let err = param_fd_error(&mut model.params, &loss, Some(&head_ids));
    assert!(err < 1e-4, "head rel err {err}");
}

fn oracle_aggregate(scores: &[f64], conf: &[f64]) -> f64 {
    let mx = conf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for c in conf {
        z += (c - mx).exp();
    }
    let mut out = 0.0;
    for i in 0..scores.len() {
        out += (conf[i] - mx).exp() / z * (1.0 / (1.0 + (-scores[i]).exp()));
    }
    out
}

#[test]
fn aggregation_anchors() {
    let scores = vec![-1.0, 0.5, 2.0, 0.0];
    let uniform = RegionalGrid::new(2, scores.clone(), vec![0.3; 4]).unwrap();
    let mean = scores.iter().map(|&s| sigmoid(s)).sum::<f64>() / 4.0;
    assert!((aggregate_score(&uniform) - mean).abs() < 1e-15);
    let mut last = f64::NAN;
    for big in [5.0, 20.0, 80.0] {
        let grid = RegionalGrid::new(2, scores.clone(), vec![0.0, 0.0, big, 0.0]).unwrap();
        last = aggregate_score(&grid);
    }
    assert!((last - sigmoid(2.0)).abs() < 1e-12);
    let single = RegionalGrid::new(1, vec![0.7], vec![-3.0]).unwrap();
    assert_eq!(aggregate_score(&single), sigmoid(0.7));
    assert!(RegionalGrid::new(2, vec![0.0; 3], vec![0.0; 4]).is_err());
}

proptest! {
    #[test]
    fn aggregation_oracle_bounds_and_shift(
        vals in proptest::collection::vec((-20.0f64..20.0, -30.0f64..30.0), 9),
        shift in -50.0f64..50.0,
    ) {
        let (scores, conf): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
        let grid = RegionalGrid::new(3, scores.clone(), conf.clone()).unwrap();
        let got = aggregate_score(&grid);
        prop_assert!((got - oracle_aggregate(&scores, &conf)).abs() < 1e-12);
        prop_assert!(got > 0.0 && got < 1.0);
        let shifted = RegionalGrid::new(3, scores, conf.iter().map(|c| c + shift).collect()).unwrap();
        prop_assert!((aggregate_score(&shifted) - got).abs() < 1e-10);
    }

    #[test]
    fn charbonnier_bound(p in -2.0f64..2.0, t in -2.0f64..2.0) {
        let l = charbonnier_loss(p, t, 1e-3).unwrap();
        prop_assert!(l >= 1e-3);
        prop_assert!((l - (p - t).abs()).abs() <= 1e-3);
    }
}

#[test]
fn charbonnier_anchors() {
    assert_eq!(charbonnier_loss(0.4, 0.4, 1e-3).unwrap(), 1e-3);
    assert!((charbonnier_loss(1.0, 0.0, 1e-3).unwrap() - (1.0f64 + 1e-6).sqrt()).abs() < 1e-15);
    assert!((charbonnier_loss(1.0, 0.0, 1e-3).unwrap() - 1.0000005).abs() < 1e-9);
    assert!(matches!(charbonnier_loss(0.0, 0.0, 0.0), Err(crate::Error::NonPositiveEpsilon(_))));
    assert!(charbonnier_loss(0.0, 0.0, -1.0).is_err());
}

fn coverage_complete(h: usize, w: usize, p: usize) -> bool {
    let mut mask = vec![false; h * w];
    for (x0, y0, pw, ph) in crop_layout(h, w, p).unwrap() {
        assert!(x0 + pw <= w && y0 + ph <= h);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                mask[y * w + x] = true;
            }
        }
    }
    mask.iter().all(|&m| m)
}

#[test]
fn crop_layout_cases() {
    assert_eq!(crop_layout(96, 96, 96).unwrap(), vec![(0, 0, 96, 96)]);
    let five = crop_layout(128, 128, 96).unwrap();
    assert_eq!(five.len(), 5);
    assert!(five.contains(&(16, 16, 96, 96)));
    assert!(coverage_complete(128, 128, 96));
    for h in 32..=100 {
        for w in [32, 33, 47, 64, 65, 96, 100] {
            assert!(coverage_complete(h, w, 32), "{h}x{w}");
        }
    }
    assert!(matches!(crop_layout(31, 64, 32), Err(crate::Error::ImageTooSmall { side: 31, patch: 32 })));
}

fn tiny_encoder() -> Encoder {
    Encoder::new(EncoderConfig {
        input_size: 16,
        channels: vec![4, 4, 4, 4, 4, 4],
        mlp_hidden: 8,
        repr_dim: 4,
        patch_size: 8,
        ..EncoderConfig::default()
    })
    .unwrap()
}

#[test]
fn single_patch_image_equals_patch_forward() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    randomize(&mut model.params, 5, 0.3);
    let enc = tiny_encoder();
    let face = FaceSpec::random(2);
    let img = face.render(16, 16);
    let lms = synthetic_landmark_provider(&face);
    let pred = score_image(&model, &enc, &img, &lms).unwrap();
    assert_eq!(pred.per_patch.len(), 1);
    assert_eq!(pred.mos, pred.per_patch[0].mos);
    let rep = crate::dsl::encode_degradation(&enc, &img).unwrap();
    let lv = crate::landmarks::pool_landmark_encoding(&lms, 2).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &[&img], &[rep.clone()], &[lv]).unwrap();
    assert_eq!(g.value(out.mos).data[0], pred.mos);
    assert!((aggregate_score(&pred.per_patch[0].grid) - pred.mos).abs() < 1e-12);
    let mut g = Graph::new();
    let v = image_mos_graph(&mut g, &model, &img, &rep, &lms).unwrap();
    assert_eq!(g.value(v).data[0], pred.mos);
}

#[test]
fn constant_image_patches_agree() {
    let mut model = GfiqaModel::new(tiny_config(), 4).unwrap();
    randomize(&mut model.params, 6, 0.3);
    let enc = Encoder::new(EncoderConfig {
        input_size: 24,
        channels: vec![4, 4, 4, 4, 4, 4],
        mlp_hidden: 8,
        repr_dim: 4,
        patch_size: 8,
        ..EncoderConfig::default()
    })
    .unwrap();
    let img = ImageBuffer::filled(24, 24, [0.4, 0.5, 0.6]);
    let pred = score_image(&model, &enc, &img, &LandmarkSet::empty(68)).unwrap();
    assert_eq!(pred.per_patch.len(), 5);
    for p in &pred.per_patch {
        assert!((p.mos - pred.mos).abs() < 1e-6);
    }
    let small = ImageBuffer::filled(12, 24, [0.5; 3]);
    assert!(matches!(
        score_image(&model, &enc, &small, &LandmarkSet::empty(68)),
        Err(crate::Error::ImageTooSmall { .. })
    ));
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = tiny_config();
    let mut model = GfiqaModel::new(cfg, 4).unwrap();
    randomize(&mut model.params, 8, 0.2);
    let face = FaceSpec::random(4);
    let img = face.render(24, 24);
    let lms = synthetic_landmark_provider(&face);
    let rep = vec![0.3, -0.2, 0.5, 0.1];
    let m = model.clone();
    let loss = move |ps: &ParamSet, g: &mut Graph| {
        let mut mm = m.clone();
        mm.params = ps.clone();
        let mos = image_mos_graph(g, &mm, &img, &rep, &lms).unwrap();
        g.charbonnier(mos, &[0.8], 1e-3)
    };
    let err = param_fd_error(&mut model.params, &loss, None);
    assert!(err < 1e-3, "end-to-end rel err {err}");
}

#[test]
fn confidence_map_export() {
    let uniform = |rect| PatchPrediction {
        rect,
        grid: RegionalGrid::new(2, vec![0.0; 4], vec![1.0; 4]).unwrap(),
        mos: 0.5,
    };
    let pred = QualityPrediction {
        mos: 0.5,
        height: 24,
        width: 24,
        per_patch: crop_layout(24, 24, 16).unwrap().into_iter().map(uniform).collect(),
    };
    let map = export_confidence_map(&pred);
    assert!(map.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let mut rng = rng_for(2, "conf", 0);
    let per_patch: Vec<PatchPrediction> = crop_layout(24, 24, 16)
        .unwrap()
        .into_iter()
        .map(|rect| PatchPrediction {
            rect,
            grid: RegionalGrid::new(2, vec![0.0; 4], (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
            mos: 0.5,
        })
        .collect();
    for p in &per_patch {
        assert!((p.grid.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let pred = QualityPrediction {
        mos: 0.5,
        height: 24,
        width: 24,
        per_patch,
    };
    let map = export_confidence_map(&pred);
    for y in 0..24 {
        for x in 0..24 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for p in &pred.per_patch {
                let (x0, y0, w, h) = p.rect;
                if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
                    let (tx, ty) = ((x - x0) * 2 / w, (y - y0) * 2 / h);
                    sum += p.grid.weights()[ty * 2 + tx];
                    n += 1.0;
                }
            }
            assert!((map.data[y * 24 + x] - sum / n).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&map.data[y * 24 + x]));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("conf");
    map.write(&stem).unwrap();
    assert!(stem.with_extension("png").exists());
    let back = ConfidenceMap::read_raw(&stem).unwrap();
    assert_eq!((back.height, back.width), (24, 24));
    for (a, b) in back.data.iter().zip(&map.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// One family, so quality is monotone in a single visible strength axis.
fn monotone_samples(n: usize, seed: u64) -> Vec<GfiqaSample> {
    let opts = crate::data_io::ToyOptions {
        families: vec![crate::degradations::Family::GaussianNoise],
        real_style: false,
        mos_noise: 0.0,
        ..crate::data_io::ToyOptions::default()
    };
    crate::data_io::toy_samples(n, seed, &opts)
        .unwrap()
        .into_iter()
        .map(|s| GfiqaSample {
            mos: 1.0 - s.strength,
            image: s.image,
            landmarks: s.landmarks,
        })
        .collect()
}

fn toy_encoder() -> Encoder {
    Encoder::new(EncoderConfig::default()).unwrap()
}

#[test]
fn flips_keep_targets() {
    let samples = monotone_samples(12, 3);
    let cfg = ModelConfig {
        batch: 32,
        ..ModelConfig::default()
    };
    let b = training_batch(&samples, &cfg, 0).unwrap();
    assert!(b.flipped.iter().any(|&f| f) && b.flipped.iter().any(|&f| !f));
    for (i, &idx) in b.indices.iter().enumerate() {
        assert_eq!(b.targets[i], samples[idx].mos);
        assert_eq!(b.patches[i].height(), 32);
    }
    let again = training_batch(&samples, &cfg, 0).unwrap();
    assert_eq!(again.patches, b.patches);
}

#[test]
fn zero_lr_keeps_weights_and_encoder_frozen() {
    let samples = monotone_samples(10, 1);
    let enc = toy_encoder();
    let before = enc.params.content_hash();
    let cfg = ModelConfig {
        learning_rate: 0.0,
        iterations: 1,
        batch: 4,
        ..ModelConfig::default()
    };
    let init = GfiqaModel::new(cfg.clone(), 128).unwrap();
    let trained = train_gfiqa(&samples, &enc, cfg).unwrap();
    assert_eq!(trained.model.params.content_hash(), init.params.content_hash());
    assert_eq!(enc.params.content_hash(), before);
    assert_eq!(trained.encoder_hash, before);
}

#[test]
fn training_halves_loss_and_round_trips() {
    let samples = monotone_samples(60, 2);
    let enc = toy_encoder();
    let before = enc.params.content_hash();
    let cfg = ModelConfig {
        iterations: 300,
        learning_rate: 1e-3,
        ..ModelConfig::default()
    };
    let trained = train_gfiqa(&samples, &enc, cfg.clone()).unwrap();
    assert_eq!(enc.params.content_hash(), before);
    let mean = |s: &[(usize, f64)]| s.iter().map(|l| l.1).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&trained.log[..10]), mean(&trained.log[290..]));
    assert!(last <= 0.5 * first, "loss {first} -> {last}");

    let again = train_gfiqa(&samples[..20], &enc, ModelConfig { iterations: 5, ..cfg }).unwrap();
    let again2 = train_gfiqa(&samples[..20], &enc, again.model.config.clone()).unwrap();
    assert_eq!(again.log, again2.log);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    trained.save(&path).unwrap();
    let back = TrainedGfiqa::load(&path).unwrap();
    assert_eq!(back, trained);
    let lms = &samples[0].landmarks;
    let a = score_image(&trained.model, &enc, &samples[0].image, lms).unwrap();
    let b = score_image(&back.model, &enc, &samples[0].image, lms).unwrap();
    assert_eq!(a, b);
}
