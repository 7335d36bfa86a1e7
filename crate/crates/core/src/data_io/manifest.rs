//! JSON-lines dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degradations::Family;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinTone {
    Light,
    Medium,
    Dark,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    pub mos: Option<f64>,
    pub split: Split,
    pub skin_tone: SkinTone,
    pub gender: Gender,
    pub occluded: bool,
    /// Ground-truth degradation family, known for synthetic data only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<Family>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_path.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate image path `{}`", r.image_path)));
            }
            if let Some(m) = r.mos {
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidInput(format!("mos {m} outside [0, 1] for `{}`", r.image_path)));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        Self::new(root, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Self {
        Self {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    /// Records of the given splits, in manifest order.
    pub fn filter(&self, pred: impl Fn(&ManifestRecord) -> bool) -> Self {
        Self {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| pred(r)).cloned().collect(),
        }
    }
}

/// A manifest with its images decoded in memory, index-aligned with `records()`.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageBuffer>,
}

impl LoadedDataset {
    pub fn load(manifest: DatasetManifest) -> Result<Self> {
        let images = manifest
            .records
            .iter()
            .map(|r| ImageBuffer::load(manifest.resolve(r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, images })
    }

    pub fn from_parts(manifest: DatasetManifest, images: Vec<ImageBuffer>) -> Result<Self> {
        if manifest.records.len() != images.len() {
            return Err(Error::LengthMismatch {
                left: manifest.records.len(),
                right: images.len(),
            });
        }
        Ok(Self { manifest, images })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.manifest.records
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, pred: impl Fn(&ManifestRecord) -> bool) -> Self {
        let mut records = Vec::new();
        let mut images = Vec::new();
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            if pred(r) {
                records.push(r.clone());
                images.push(img.clone());
            }
        }
        Self {
            manifest: DatasetManifest {
                root: self.manifest.root.clone(),
                records,
            },
            images,
        }
    }
}
