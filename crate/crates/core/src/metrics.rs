//! Correlation metrics and the degradation-retrieval benchmark.

use serde::{Deserialize, Serialize};

use crate::degradations::Family;
use crate::dsl::Encoder;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn check_pairs(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: actual.len(),
            right: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: actual.len(),
        });
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("score pairs must be finite".into()));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pairs(actual, predicted)?;
    let n = actual.len() as f64;
    let ma = actual.iter().sum::<f64>() / n;
    let mp = predicted.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vp) = (0.0, 0.0, 0.0);
    for (a, p) in actual.iter().zip(predicted) {
        cov += (a - ma) * (p - mp);
        va += (a - ma) * (a - ma);
        vp += (p - mp) * (p - mp);
    }
    if va == 0.0 || vp == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((cov / (va.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks. A series that is
/// constant has no rank order, so its correlation is reported as 0.
pub fn srcc(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pairs(actual, predicted)?;
    match plcc(&average_ranks(actual), &average_ranks(predicted)) {
        Err(Error::ZeroVariance) => Ok(0.0),
        r => r,
    }
}

/// Ranked average precision truncated at `k`, normalized by
/// `min(k, relevant_total)`.
pub fn average_precision<L: PartialEq>(query: &L, retrieved: &[L], k: usize, relevant_total: usize) -> f64 {
    let denom = k.min(relevant_total);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, label) in retrieved.iter().take(k).enumerate() {
        if label == query {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / denom as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_label: Family,
    pub retrieved: Vec<usize>,
    pub retrieved_labels: Vec<Family>,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub map: f64,
    pub per_query: Vec<QueryResult>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ranks the gallery by squared L2 distance for every query (ties broken by
/// gallery index). With `exclude_self`, gallery item `i` is skipped for query `i`.
pub fn retrieve(
    queries: &[(Vec<f64>, Family)],
    gallery: &[(Vec<f64>, Family)],
    k: usize,
    exclude_self: bool,
) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for (qi, (q, label)) in queries.iter().enumerate() {
        let mut cand: Vec<(f64, usize)> = gallery
            .iter()
            .enumerate()
            .filter(|(gi, _)| !(exclude_self && *gi == qi))
            .map(|(gi, (g, _))| (sq_dist(q, g), gi))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let relevant = cand.iter().filter(|(_, gi)| gallery[*gi].1 == *label).count();
        let retrieved: Vec<usize> = cand.iter().take(k).map(|c| c.1).collect();
        let retrieved_labels: Vec<Family> = retrieved.iter().map(|&gi| gallery[gi].1).collect();
        let ap = average_precision(label, &retrieved_labels, k, relevant);
        per_query.push(QueryResult {
            query_label: *label,
            retrieved,
            retrieved_labels,
            ap,
        });
    }
    let map = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|q| q.ap).sum::<f64>() / per_query.len() as f64
    };
    Ok(RetrievalResult { k, map, per_query })
}

/// Encodes labeled queries and gallery with `encoder` and runs [`retrieve`].
pub fn retrieval_experiment(
    encoder: &Encoder,
    queries: &[(ImageBuffer, Family)],
    gallery: &[(ImageBuffer, Family)],
    k: usize,
) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let encode = |set: &[(ImageBuffer, Family)]| -> Result<Vec<(Vec<f64>, Family)>> {
        let imgs: Vec<ImageBuffer> = set.iter().map(|(i, _)| i.clone()).collect();
        Ok(encoder
            .encode_images(&imgs)?
            .into_iter()
            .zip(set.iter().map(|(_, l)| *l))
            .collect())
    };
    retrieve(&encode(queries)?, &encode(gallery)?, k, false)
}

/// Evaluation report written by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plcc: f64,
    pub srcc: f64,
    pub n: usize,
    pub split: String,
}

impl EvalReport {
    pub fn compute(actual: &[f64], predicted: &[f64], split: impl Into<String>) -> Result<Self> {
        Ok(Self {
            plcc: plcc(actual, predicted)?,
            srcc: srcc(actual, predicted)?,
            n: actual.len(),
            split: split.into(),
        })
    }
}

/// Ratio of the mean distance between family centroids to the mean distance of
/// representations from their own family centroid.
pub fn separability(reps: &[(Vec<f64>, Family)]) -> Result<f64> {
    let mut fams: Vec<Family> = reps.iter().map(|r| r.1).collect();
    fams.sort();
    fams.dedup();
    if fams.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: fams.len(),
        });
    }
    let dim = reps[0].0.len();
    let centroids: Vec<Vec<f64>> = fams
        .iter()
        .map(|f| {
            let members: Vec<&Vec<f64>> = reps.iter().filter(|r| r.1 == *f).map(|r| &r.0).collect();
            (0..dim)
                .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    let mut inter = 0.0;
    let mut pairs = 0.0;
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            inter += sq_dist(&centroids[a], &centroids[b]).sqrt();
            pairs += 1.0;
        }
    }
    let intra = reps
        .iter()
        .map(|(v, f)| {
            let c = &centroids[fams.binary_search(f).unwrap()];
            sq_dist(v, c).sqrt()
        })
        .sum::<f64>()
        / reps.len() as f64;
    if intra == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((inter / pairs) / intra)
}
