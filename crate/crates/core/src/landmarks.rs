//! Landmark identifiers, their sinusoidal encodings, and patch-local bookkeeping.
//!
//! Encodings depend only on a landmark's identifier, never on where it sits,
//! so the same facial feature carries the same code in every crop.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::FaceSpec;

pub const DEFAULT_VOCAB: usize = 68;
pub const DEFAULT_BANDS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub vocab: usize,
    pub entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn new(vocab: usize, entries: Vec<Landmark>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &entries {
            if l.id >= vocab {
                return Err(Error::IdOutOfRange { id: l.id, vocab });
            }
            if !seen.insert(l.id) {
                return Err(Error::InvalidInput(format!("landmark id {} listed twice", l.id)));
            }
            if !(0.0..=1.0).contains(&l.x) || !(0.0..=1.0).contains(&l.y) {
                return Err(Error::InvalidInput(format!(
                    "landmark {} at ({}, {}) is outside the unit square",
                    l.id, l.x, l.y
                )));
            }
        }
        Ok(Self { vocab, entries })
    }

    pub fn empty(vocab: usize) -> Self {
        Self {
            vocab,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|l| l.id).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            vocab: self.vocab,
            entries: self
                .entries
                .iter()
                .map(|l| Landmark { x: 1.0 - l.x, ..*l })
                .collect(),
        }
    }
}

/// `[sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(F-1) pi t), cos(2^(F-1) pi t)]`, `t = id / L`.
pub fn encode_landmark_id(id: usize, vocab: usize, bands: usize) -> Result<Vec<f64>> {
    if id >= vocab {
        return Err(Error::IdOutOfRange { id, vocab });
    }
    if bands == 0 {
        return Err(Error::InvalidConfig("landmark encoding needs at least one band".into()));
    }
    let t = id as f64 / vocab as f64;
    let mut out = Vec::with_capacity(2 * bands);
    for f in 0..bands {
        let a = (1u64 << f) as f64 * PI * t;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

/// Landmarks inside `rect = (x0, y0, w, h)` (pixels, bounds inclusive), with
/// coordinates re-expressed relative to the patch. Ids are untouched.
pub fn landmarks_in_patch(
    set: &LandmarkSet,
    rect: (usize, usize, usize, usize),
    dims: (usize, usize),
) -> Result<LandmarkSet> {
    let (x0, y0, w, h) = rect;
    let (width, height) = dims;
    if w == 0 || h == 0 || x0 + w > width || y0 + h > height {
        return Err(Error::RectOutOfBounds { rect, width, height });
    }
    let entries = set
        .entries
        .iter()
        .filter_map(|l| {
            let px = l.x * width as f64 - x0 as f64;
            let py = l.y * height as f64 - y0 as f64;
            let inside = (0.0..=w as f64).contains(&px) && (0.0..=h as f64).contains(&py);
            inside.then(|| Landmark {
                id: l.id,
                x: px / w as f64,
                y: py / h as f64,
            })
        })
        .collect();
    Ok(LandmarkSet {
        vocab: set.vocab,
        entries,
    })
}

/// Mean of `[encode(id) || (x, y)]` over the set; zeros when empty.
pub fn pool_landmark_encoding(set: &LandmarkSet, bands: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; 2 * bands + 2];
    for l in &set.entries {
        let enc = encode_landmark_id(l.id, set.vocab, bands)?;
        for (a, v) in acc.iter_mut().zip(enc.iter().chain(&[l.x, l.y])) {
            *a += v;
        }
    }
    if !set.is_empty() {
        let n = set.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

fn ellipse_point(c: (f64, f64), r: (f64, f64), angle: f64) -> (f64, f64) {
    (c.0 + r.0 * angle.cos(), c.1 + r.1 * angle.sin())
}

fn lerp(a: (f64, f64), b: (f64, f64), t: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

/// The 68-point iBUG layout placed on a procedural face. Ids 36-41 ring the
/// image-left eye and 42-47 the image-right eye.
pub fn synthetic_landmark_provider(face: &FaceSpec) -> LandmarkSet {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(68);
    let (cx, cy) = face.center;
    let (rx, ry) = face.radii;

    // jaw: 17 points from the image-left temple under the chin to the right
    let jaw_c = (cx, cy - ry * 0.1);
    for i in 0..17 {
        let a = PI - PI * i as f64 / 16.0;
        pts.push(ellipse_point(jaw_c, (rx * 0.98, ry * 1.05), a));
    }

    // brows: 5 points each over the eyes
    for (ex, ey) in [face.left_eye(), face.right_eye()] {
        let by = ey - face.eye_r * 2.2;
        for i in 0..5 {
            let t = i as f64 / 4.0 - 0.5;
            pts.push((ex + t * face.eye_r * 3.4, by - face.eye_r * 0.35 * (1.0 - 4.0 * t * t)));
        }
    }

    // nose bridge (4) then nostrils (5)
    let top = (cx, face.eye_y);
    let tip = (cx, face.eye_y + face.nose_len);
    for i in 0..4 {
        pts.push(lerp(top, tip, i as f64 / 3.0));
    }
    for i in 0..5 {
        let t = i as f64 / 4.0 - 0.5;
        pts.push((cx + t * face.nose_w, tip.1 + face.nose_len * 0.12 * (1.0 - 2.0 * t.abs())));
    }

    // eyes: 6 points each around the eye ellipse, starting at the outer corner
    for (k, (ex, ey)) in [face.left_eye(), face.right_eye()].into_iter().enumerate() {
        let (start, dir) = if k == 0 { (PI, 1.0) } else { (0.0, -1.0) };
        for i in 0..6 {
            let a = start + dir * 2.0 * PI * i as f64 / 6.0;
            pts.push(ellipse_point((ex, ey), (face.eye_r * 1.5, face.eye_r * 0.7), a));
        }
    }

    // outer lip (12) and inner lip (8)
    for i in 0..12 {
        let a = PI + 2.0 * PI * i as f64 / 12.0;
        pts.push(ellipse_point((cx, face.mouth_y), (face.mouth_w, face.mouth_h), a));
    }
    for i in 0..8 {
        let a = PI + 2.0 * PI * i as f64 / 8.0;
        pts.push(ellipse_point((cx, face.mouth_y), (face.mouth_w * 0.7, face.mouth_h * 0.35), a));
    }
    debug_assert_eq!(pts.len(), 68);

    let entries = pts
        .into_iter()
        .enumerate()
        .map(|(id, (x, y))| Landmark {
            id,
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        })
        .collect();
    LandmarkSet {
        vocab: DEFAULT_VOCAB,
        entries,
    }
}

/// One line of a landmark file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub image_id: String,
    pub landmarks: Vec<Landmark>,
}

pub fn write_landmarks_jsonl(mut out: impl Write, records: &[LandmarkRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_landmarks_jsonl(input: impl BufRead) -> Result<Vec<LandmarkRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
