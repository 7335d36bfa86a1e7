//! Contrastive objectives over degradation representations, each with its
//! analytic gradient.

use crate::error::{Error, Result};

/// Loss value plus gradients with respect to each input list.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<Vec<f64>>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_dims(dim: usize, reps: &[Vec<f64>]) -> Result<()> {
    for r in reps {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    Ok(())
}

fn zeros_like(reps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    reps.iter().map(|r| vec![0.0; r.len()]).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Negative squared L2 distance.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(-sq_dist(a, b))
}

fn proximity_weights(query: &[f64], gallery: &[Vec<f64>], theta: f64) -> Vec<f64> {
    let mut w: Vec<f64> = gallery.iter().map(|g| -sq_dist(query, g) / theta).collect();
    crate::nn::softmax_in_place(&mut w);
    w
}

/// Softmax-weighted combination of `gallery`, weights from `similarity / theta`.
pub fn soft_proximity_map(query: &[f64], gallery: &[Vec<f64>], theta: f64) -> Result<Vec<f64>> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    check_dims(query.len(), gallery)?;
    let w = proximity_weights(query, gallery, theta);
    let mut out = vec![0.0; query.len()];
    for (wj, g) in w.iter().zip(gallery) {
        axpy(&mut out, *wj, g);
    }
    Ok(out)
}

fn validate_sets(s: &[Vec<f64>], r: &[Vec<f64>], theta: f64) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: s.len() });
    }
    if r.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {theta}")));
    }
    check_dims(s[0].len(), s)?;
    check_dims(s[0].len(), r)
}

/// One direction of the dual-set loss. Each `s_i` is mapped into `r`, and the
/// mapped point must sit closer to `s_i` than to the other members of `s`.
/// With `include_positive` the denominator also holds the positive term.
pub fn contrastive_loss_grad(s: &[Vec<f64>], r: &[Vec<f64>], theta: f64, include_positive: bool) -> Result<LossGrad> {
    validate_sets(s, r, theta)?;
    let m = s.len();
    let dim = s[0].len();
    let inv_m = 1.0 / m as f64;
    let c2 = 2.0 / theta;
    let mut gs = zeros_like(s);
    let mut gr = zeros_like(r);
    let mut total = 0.0;
    let mut g_h = vec![0.0; dim];
    let mut diff = vec![0.0; dim];
    for i in 0..m {
        let w = proximity_weights(&s[i], r, theta);
        let mut h = vec![0.0; dim];
        for (wj, rj) in w.iter().zip(r) {
            axpy(&mut h, *wj, rj);
        }
        let logits: Vec<f64> = s.iter().map(|sk| -sq_dist(sk, &h) / theta).collect();
        let in_denom = |k: usize| include_positive || k != i;
        let lse = log_sum_exp((0..m).filter(|&k| in_denom(k)).map(|k| logits[k]));
        total += lse - logits[i];

        // dl/dlogit_k: softmax over the denominator, minus one at the positive
        g_h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            let mut c = if in_denom(k) { (logits[k] - lse).exp() } else { 0.0 };
            if k == i {
                c -= 1.0;
            }
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                diff[d] = s[k][d] - h[d];
            }
            axpy(&mut gs[k], -c * c2 * inv_m, &diff);
            axpy(&mut g_h, c * c2, &diff);
        }
        // back through h = sum_j w_j r_j and the softmax weights
        let dw: Vec<f64> = r.iter().map(|rj| dot(&g_h, rj)).collect();
        let wd: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        for j in 0..r.len() {
            axpy(&mut gr[j], w[j] * inv_m, &g_h);
            let dz = w[j] * (dw[j] - wd);
            if dz == 0.0 {
                continue;
            }
            for d in 0..dim {
                diff[d] = s[i][d] - r[j][d];
            }
            axpy(&mut gs[i], -dz * c2 * inv_m, &diff);
            axpy(&mut gr[j], dz * c2 * inv_m, &diff);
        }
    }
    Ok(LossGrad {
        loss: total * inv_m,
        grads: vec![gs, gr],
    })
}

/// The dual-set contrastive loss with the positive left out of the denominator.
pub fn contrastive_loss(s: &[Vec<f64>], r: &[Vec<f64>], theta: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(s, r, theta, false)?.loss)
}

/// `L(S, R) + L(R, S)`; gradients are returned as `[dS, dR]`.
pub fn degradation_extraction_loss_grad(
    s: &[Vec<f64>],
    r: &[Vec<f64>],
    theta: f64,
    include_positive: bool,
) -> Result<LossGrad> {
    let fwd = contrastive_loss_grad(s, r, theta, include_positive)?;
    let bwd = contrastive_loss_grad(r, s, theta, include_positive)?;
    let mut grads = fwd.grads;
    for (a, b) in grads[0].iter_mut().zip(&bwd.grads[1]) {
        axpy(a, 1.0, b);
    }
    for (a, b) in grads[1].iter_mut().zip(&bwd.grads[0]) {
        axpy(a, 1.0, b);
    }
    Ok(LossGrad {
        loss: fwd.loss + bwd.loss,
        grads,
    })
}

pub fn degradation_extraction_loss(s: &[Vec<f64>], r: &[Vec<f64>], theta: f64) -> Result<f64> {
    Ok(degradation_extraction_loss_grad(s, r, theta, false)?.loss)
}

/// `-x.x+/theta + logsumexp_n(x.x-_n/theta)`; gradients as `[[dx], [dx+], dnegatives]`.
pub fn patch_based_loss_grad(query: &[f64], positive: &[f64], negatives: &[Vec<f64>], theta: f64) -> Result<LossGrad> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    check_dims(query.len(), std::slice::from_ref(&positive.to_vec()))?;
    check_dims(query.len(), negatives)?;
    let neg_logits: Vec<f64> = negatives.iter().map(|n| dot(query, n) / theta).collect();
    let lse = log_sum_exp(neg_logits.iter().copied());
    let loss = lse - dot(query, positive) / theta;
    let mut gq: Vec<f64> = positive.iter().map(|p| -p / theta).collect();
    let mut gn = Vec::with_capacity(negatives.len());
    for (l, n) in neg_logits.iter().zip(negatives) {
        let p = (l - lse).exp();
        axpy(&mut gq, p / theta, n);
        gn.push(query.iter().map(|q| p * q / theta).collect());
    }
    let gp = query.iter().map(|q| -q / theta).collect();
    Ok(LossGrad {
        loss,
        grads: vec![vec![gq], vec![gp], gn],
    })
}

pub fn patch_based_loss(query: &[f64], positive: &[f64], negatives: &[Vec<f64>], theta: f64) -> Result<f64> {
    Ok(patch_based_loss_grad(query, positive, negatives, theta)?.loss)
}

/// Mean patch loss over a batch of `2 * b` crops: crops `2k` and `2k + 1` come
/// from image `k`. Each crop is a query whose positive is its sibling and whose
/// negatives are all crops of other images. With `include_positive` the
/// sibling also joins the denominator, which bounds the loss below.
pub fn patch_batch_loss_grad(reps: &[Vec<f64>], theta: f64, include_positive: bool) -> Result<LossGrad> {
    if reps.len() < 4 || reps.len() % 2 != 0 {
        return Err(Error::DegenerateBatch(format!(
            "patch batches need an even number of crops from at least two images, got {}",
            reps.len()
        )));
    }
    let mut grads = zeros_like(reps);
    let mut total = 0.0;
    let nq = reps.len() as f64;
    for q in 0..reps.len() {
        let pos = q ^ 1;
        let neg_idx: Vec<usize> = (0..reps.len())
            .filter(|&k| k / 2 != q / 2 || (include_positive && k == pos))
            .collect();
        let negs: Vec<Vec<f64>> = neg_idx.iter().map(|&k| reps[k].clone()).collect();
        let lg = patch_based_loss_grad(&reps[q], &reps[pos], &negs, theta)?;
        total += lg.loss;
        axpy(&mut grads[q], 1.0 / nq, &lg.grads[0][0]);
        axpy(&mut grads[pos], 1.0 / nq, &lg.grads[1][0]);
        for (k, g) in neg_idx.iter().zip(&lg.grads[2]) {
            axpy(&mut grads[*k], 1.0 / nq, g);
        }
    }
    Ok(LossGrad {
        loss: total / nq,
        grads: vec![grads],
    })
}

/// Supervised InfoNCE over family labels with negative squared L2 similarity.
/// Every (anchor, positive) pair with matching labels contributes
/// `-log(exp(l_p) / (exp(l_p) + sum_n exp(l_n)))`; the loss is the pair mean.
pub fn naive_loss_grad(reps: &[Vec<f64>], labels: &[usize], theta: f64) -> Result<LossGrad> {
    if reps.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: reps.len(),
            right: labels.len(),
        });
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let has_pair = distinct
        .iter()
        .any(|l| labels.iter().filter(|x| *x == l).count() >= 2);
    if distinct.len() < 2 || !has_pair {
        return Err(Error::DegenerateBatch(
            "need two families and one family with at least two representations".into(),
        ));
    }
    check_dims(reps[0].len(), reps)?;
    let n = reps.len();
    let dim = reps[0].len();
    let c2 = 2.0 / theta;
    let logits: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| -sq_dist(&reps[a], &reps[b]) / theta).collect())
        .collect();
    let mut pairs = 0usize;
    let mut total = 0.0;
    let mut grads = zeros_like(reps);
    let mut diff = vec![0.0; dim];
    // accumulate unnormalized, divide by the pair count at the end
    for a in 0..n {
        let negs: Vec<usize> = (0..n).filter(|&b| labels[b] != labels[a]).collect();
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let terms = std::iter::once(p).chain(negs.iter().copied());
            let lse = log_sum_exp(terms.clone().map(|b| logits[a][b]));
            total += lse - logits[a][p];
            pairs += 1;
            for b in terms {
                let mut c = (logits[a][b] - lse).exp();
                if b == p {
                    c -= 1.0;
                }
                for d in 0..dim {
                    diff[d] = reps[a][d] - reps[b][d];
                }
                axpy(&mut grads[a], -c * c2, &diff);
                axpy(&mut grads[b], c * c2, &diff);
            }
        }
    }
    let inv = 1.0 / pairs as f64;
    grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
    Ok(LossGrad {
        loss: total * inv,
        grads: vec![grads],
    })
}

/// [`naive_loss_grad`] over representations grouped by family.
pub fn naive_loss<K: Ord>(reps_by_family: &std::collections::BTreeMap<K, Vec<Vec<f64>>>, theta: f64) -> Result<f64> {
    let mut reps = Vec::new();
    let mut labels = Vec::new();
    for (i, group) in reps_by_family.values().enumerate() {
        for r in group {
            reps.push(r.clone());
            labels.push(i);
        }
    }
    Ok(naive_loss_grad(&reps, &labels, theta)?.loss)
}
