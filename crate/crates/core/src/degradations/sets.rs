//! Set S (one source, every family) and Set R (sampled manifest images).

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{apply_degradation, sample_recipe, Family, Recipe};
use crate::data_io::LoadedDataset;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::{derive_labeled, rng_for};

pub const SET_S_SIZE: usize = 16;

/// Set R must contain at least one image rated strictly above this.
pub const HIGH_QUALITY_MOS: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct SetS {
    pub source: ImageBuffer,
    pub members: Vec<(ImageBuffer, Recipe)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetR {
    /// Manifest indices of the members, in draw order.
    pub indices: Vec<usize>,
    pub members: Vec<(ImageBuffer, f64)>,
}

/// The clean source plus one freshly sampled variant per degraded family,
/// ordered by [`Family::ALL`].
pub fn build_set_s(source: &ImageBuffer, seed: u64) -> Result<SetS> {
    let mut members = Vec::with_capacity(SET_S_SIZE);
    for family in Family::ALL {
        let recipe = if family == Family::Clean {
            Recipe::clean()
        } else {
            sample_recipe(family, derive_labeled(seed, "set_s", family.index() as u64))?
        };
        let img = apply_degradation(source, &recipe)?;
        members.push((img, recipe));
    }
    Ok(SetS {
        source: source.clone(),
        members,
    })
}

/// Draws `n` distinct indices; if the draw holds no image with
/// mos > [`HIGH_QUALITY_MOS`], one slot is replaced by a random such image.
pub fn select_set_r_indices(mos: &[Option<f64>], n: usize, seed: u64) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..mos.len()).filter(|&i| mos[i].is_some()).collect();
    if eligible.len() < n || n == 0 {
        return Err(Error::InsufficientImages {
            needed: n.max(1),
            available: eligible.len(),
        });
    }
    let high: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| mos[i].unwrap() > HIGH_QUALITY_MOS)
        .collect();
    if high.is_empty() {
        return Err(Error::InsufficientHighQuality);
    }
    let mut rng = rng_for(seed, "set_r", 0);
    let mut picked: Vec<usize> = eligible.choose_multiple(&mut rng, n).copied().collect();
    if !picked.iter().any(|&i| mos[i].unwrap() > HIGH_QUALITY_MOS) {
        let slot = rng.random_range(0..n);
        picked[slot] = *high.choose(&mut rng).unwrap();
    }
    Ok(picked)
}

pub fn build_set_r(dataset: &LoadedDataset, seed: u64, n: usize) -> Result<SetR> {
    let mos: Vec<Option<f64>> = dataset.records().iter().map(|r| r.mos).collect();
    let indices = select_set_r_indices(&mos, n, seed)?;
    let members = indices
        .iter()
        .map(|&i| (dataset.images[i].clone(), mos[i].unwrap()))
        .collect();
    Ok(SetR { indices, members })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source() -> ImageBuffer {
        ImageBuffer::from_fn(24, 24, |y, x| {
            let v = ((x * 7 + y * 3) % 11) as f32 / 11.0;
            [v, 1.0 - v, 0.5]
        })
    }

    #[test]
    fn set_s_has_every_family_once() {
        let s = build_set_s(&source(), 3).unwrap();
        assert_eq!(s.members.len(), SET_S_SIZE);
        let fams: Vec<Family> = s.members.iter().map(|(_, r)| r.family).collect();
        assert_eq!(fams, Family::ALL.to_vec());
        assert_eq!(s.members[0].0, s.source);
        assert_eq!(s, build_set_s(&source(), 3).unwrap());
        let other = build_set_s(&source(), 4).unwrap();
        assert!(s.members.iter().zip(&other.members).any(|(a, b)| a.0 != b.0));
    }

    #[test]
    fn forced_high_quality_member() {
        let mut mos = vec![Some(0.3); 16];
        mos[9] = Some(0.95);
        for seed in 0..20 {
            let idx = select_set_r_indices(&mos, 16, seed).unwrap();
            assert!(idx.contains(&9));
        }
        let mut sparse = vec![Some(0.5); 300];
        sparse[123] = Some(0.97);
        for seed in 0..50 {
            let idx = select_set_r_indices(&sparse, 8, seed).unwrap();
            assert!(idx.contains(&123));
            let mut d = idx.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 8);
        }
    }

    #[test]
    fn set_r_preconditions() {
        assert!(matches!(
            select_set_r_indices(&vec![Some(0.9); 10], 4, 0),
            Err(Error::InsufficientHighQuality)
        ));
        assert!(matches!(
            select_set_r_indices(&vec![Some(0.95); 3], 4, 0),
            Err(Error::InsufficientImages { .. })
        ));
    }

    #[test]
    fn sampling_census_covers_manifest() {
        let mos: Vec<Option<f64>> = (0..500).map(|i| Some(i as f64 / 500.0)).collect();
        let mut hits = vec![0usize; 500];
        for seed in 0..10_000u64 {
            for i in select_set_r_indices(&mos, 16, seed).unwrap() {
                hits[i] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h > 0));
        assert_eq!(
            select_set_r_indices(&mos, 16, 42).unwrap(),
            select_set_r_indices(&mos, 16, 42).unwrap()
        );
    }
}
