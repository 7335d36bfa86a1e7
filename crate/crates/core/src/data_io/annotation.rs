//! Absolute-category ratings, annotator qualification and MOS aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five-level ACR categories, each covering a 20-point band of the 0-100 scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcrCategory {
    Bad,
    Poor,
    Fair,
    Good,
    Excellent,
}

impl AcrCategory {
    pub const ALL: [AcrCategory; 5] = [
        AcrCategory::Bad,
        AcrCategory::Poor,
        AcrCategory::Fair,
        AcrCategory::Good,
        AcrCategory::Excellent,
    ];

    /// Band midpoint on the unit scale.
    pub fn midpoint(self) -> f64 {
        match self {
            AcrCategory::Bad => 0.10,
            AcrCategory::Poor => 0.30,
            AcrCategory::Fair => 0.50,
            AcrCategory::Good => 0.70,
            AcrCategory::Excellent => 0.90,
        }
    }
}

impl std::str::FromStr for AcrCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bad" => Ok(AcrCategory::Bad),
            "poor" => Ok(AcrCategory::Poor),
            "fair" => Ok(AcrCategory::Fair),
            "good" => Ok(AcrCategory::Good),
            "excellent" => Ok(AcrCategory::Excellent),
            _ => Err(Error::InvalidCategory(s.to_string())),
        }
    }
}

/// One rating: a category or a raw slider value in `[0, 100]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rating {
    Category(AcrCategory),
    Raw(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    pub rating: Rating,
}

pub fn acr_to_score(rating: Rating) -> Result<f64> {
    match rating {
        Rating::Category(c) => Ok(c.midpoint()),
        Rating::Raw(v) if (0.0..=100.0).contains(&v) => Ok(v / 100.0),
        Rating::Raw(v) => Err(Error::InvalidCategory(format!("raw score {v} outside [0, 100]"))),
    }
}

/// Arithmetic mean of the converted ratings.
pub fn aggregate_mos(records: &[AnnotationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let mut sum = 0.0;
    for r in records {
        sum += acr_to_score(r.rating)?;
    }
    Ok(sum / records.len() as f64)
}

/// Mean after dropping ratings more than `z` standard deviations from the mean.
/// Falls back to the plain mean when every rating would be dropped.
pub fn aggregate_mos_filtered(records: &[AnnotationRecord], z: f64) -> Result<f64> {
    let scores = records
        .iter()
        .map(|r| acr_to_score(r.rating))
        .collect::<Result<Vec<f64>>>()?;
    if scores.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let kept: Vec<f64> = scores
        .iter()
        .copied()
        .filter(|s| sd == 0.0 || ((s - mean) / sd).abs() <= z)
        .collect();
    if kept.is_empty() {
        return Ok(mean);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qualification {
    pub passed: bool,
    pub accuracy: f64,
}

pub const QUALIFY_MARGIN: f64 = 0.15;
pub const QUALIFY_THRESHOLD: f64 = 0.80;

/// An answer is correct when within `margin` of the ground truth (inclusive);
/// the annotator passes when the correct fraction reaches `threshold`.
pub fn qualify_annotator(answers: &[f64], truth: &[f64], margin: f64, threshold: f64) -> Result<Qualification> {
    if answers.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: answers.len(),
            right: truth.len(),
        });
    }
    if answers.is_empty() {
        return Err(Error::NoAnnotations);
    }
    // slack absorbs binary rounding, e.g. |0.35 - 0.2| = 0.15000000000000002
    let correct = answers
        .iter()
        .zip(truth)
        .filter(|(a, t)| (*a - *t).abs() <= margin + 1e-9)
        .count();
    let accuracy = correct as f64 / answers.len() as f64;
    Ok(Qualification {
        passed: accuracy >= threshold,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rec(rating: Rating) -> AnnotationRecord {
        AnnotationRecord {
            image_id: "x".into(),
            annotator_id: "a".into(),
            rating,
        }
    }

    #[test]
    fn acr_mapping() {
        assert_eq!(acr_to_score(Rating::Raw(40.0)).unwrap(), 0.40);
        assert_eq!(acr_to_score(Rating::Raw(0.0)).unwrap(), 0.0);
        assert_eq!(acr_to_score(Rating::Raw(100.0)).unwrap(), 1.0);
        assert_eq!(acr_to_score(Rating::Category("fair".parse().unwrap())).unwrap(), 0.50);
        assert!(matches!("meh".parse::<AcrCategory>(), Err(Error::InvalidCategory(_))));
        assert!(acr_to_score(Rating::Raw(101.0)).is_err());
        let mids: Vec<f64> = AcrCategory::ALL.iter().map(|c| c.midpoint()).collect();
        assert!(mids.windows(2).all(|w| w[0] < w[1]));
        let r: Rating = serde_json::from_str("\"good\"").unwrap();
        assert_eq!(r, Rating::Category(AcrCategory::Good));
        let r: Rating = serde_json::from_str("55").unwrap();
        assert_eq!(r, Rating::Raw(55.0));
    }

    #[test]
    fn aggregation() {
        let same: Vec<_> = (0..20).map(|_| rec(Rating::Raw(60.0))).collect();
        assert!((aggregate_mos(&same).unwrap() - 0.6).abs() < 1e-15);
        let four: Vec<_> = [20.0, 40.0, 60.0, 80.0].iter().map(|&v| rec(Rating::Raw(v))).collect();
        assert!((aggregate_mos(&four).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(aggregate_mos(&[]), Err(Error::NoAnnotations)));
        let mut outlier: Vec<_> = (0..19).map(|_| rec(Rating::Raw(50.0))).collect();
        outlier.push(rec(Rating::Raw(100.0)));
        assert_eq!(aggregate_mos_filtered(&outlier, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn qualification_thresholds() {
        let truth = vec![0.5; 20];
        let mut answers = vec![0.5; 20];
        for a in answers.iter_mut().take(4) {
            *a = 0.9;
        }
        let q = qualify_annotator(&answers, &truth, QUALIFY_MARGIN, QUALIFY_THRESHOLD).unwrap();
        assert_eq!(q.accuracy, 0.8);
        assert!(q.passed);
        answers[4] = 0.0;
        let q = qualify_annotator(&answers, &truth, QUALIFY_MARGIN, QUALIFY_THRESHOLD).unwrap();
        assert_eq!(q.accuracy, 0.75);
        assert!(!q.passed);
        let edge = qualify_annotator(&[0.35, 0.05, 0.3501], &[0.2, 0.2, 0.2], 0.15, 0.8).unwrap();
        assert!((edge.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(qualify_annotator(&[0.1], &[0.1, 0.2], 0.15, 0.8).is_err());
    }

    proptest! {
        #[test]
        fn mean_matches_oracle_and_is_order_free(vals in proptest::collection::vec(0.0f64..=100.0, 1..40), rot in 0usize..40) {
            let recs: Vec<_> = vals.iter().map(|&v| rec(Rating::Raw(v))).collect();
            let mut s = 0.0;
            for v in &vals {
                s += v / 100.0;
            }
            let got = aggregate_mos(&recs).unwrap();
            prop_assert!((got - s / vals.len() as f64).abs() < 1e-12);
            let mut rotated = recs.clone();
            rotated.rotate_left(rot % recs.len());
            prop_assert!((aggregate_mos(&rotated).unwrap() - got).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }

        #[test]
        fn raw_mapping_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(acr_to_score(Rating::Raw(lo)).unwrap() <= acr_to_score(Rating::Raw(hi)).unwrap());
        }
    }
}
