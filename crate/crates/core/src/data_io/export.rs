//! Tab-separated embedding tables for external projection tools.

use std::fs;
use std::path::Path;

use crate::dsl::Encoder;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Header `dim_0 .. dim_{D-1} label`, one row per vector. Values use the
/// shortest representation that parses back to the same f64.
pub fn write_embeddings_tsv(path: impl AsRef<Path>, rows: &[(Vec<f64>, String)]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.0.len());
    let mut out = String::new();
    for d in 0..dim {
        out.push_str(&format!("dim_{d}\t"));
    }
    out.push_str("label\n");
    for (v, label) in rows {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if label.contains(['\t', '\n']) {
            return Err(Error::InvalidInput(format!("label {label:?} contains a tab or newline")));
        }
        for x in v {
            out.push_str(&format!("{x:?}\t"));
        }
        out.push_str(label);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_embeddings_tsv(path: impl AsRef<Path>) -> Result<Vec<(Vec<f64>, String)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidInput("empty embedding file".into()))?;
    let dim = header.split('\t').count() - 1;
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != dim + 1 {
                return Err(Error::InvalidInput(format!("expected {} columns, got {}", dim + 1, cols.len())));
            }
            let v = cols[..dim]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad value {c:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok((v, cols[dim].to_string()))
        })
        .collect()
}

/// Encodes `images` and writes their representations with the given labels.
pub fn export_embeddings(encoder: &Encoder, images: &[(ImageBuffer, String)], path: impl AsRef<Path>) -> Result<()> {
    let imgs: Vec<ImageBuffer> = images.iter().map(|(i, _)| i.clone()).collect();
    let reps = encoder.encode_images(&imgs)?;
    let rows: Vec<(Vec<f64>, String)> = reps.into_iter().zip(images.iter().map(|(_, l)| l.clone())).collect();
    write_embeddings_tsv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::EncoderConfig;
    use crate::face::FaceSpec;

    #[test]
    fn shape_roundtrip_and_order() {
        let enc = Encoder::new(EncoderConfig {
            input_size: 32,
            repr_dim: 12,
            ..EncoderConfig::default()
        })
        .unwrap();
        let labels = ["gaussian_blur", "clean", "low_light", "clean", "jpeg_compression"];
        let images: Vec<(ImageBuffer, String)> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (FaceSpec::random(i as u64).render(32, 32), l.to_string()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        export_embeddings(&enc, &images, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().all(|l| l.split('\t').count() == 13));
        let back = read_embeddings_tsv(&path).unwrap();
        let imgs: Vec<ImageBuffer> = images.iter().map(|(i, _)| i.clone()).collect();
        let reps = enc.encode_images(&imgs).unwrap();
        for ((v, l), (r, want)) in back.iter().zip(reps.iter().zip(labels)) {
            assert_eq!(v, r);
            assert_eq!(l, want);
        }
    }
}
