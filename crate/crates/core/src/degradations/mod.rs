//! Seeded synthetic degradation engine.
//!
//! Every family draws its parameters from the single [`param_specs`] table.
//! A [`Recipe`] carries the family, its concrete parameters and the seed for
//! any stochastic part (noise), so applying it is a pure function of
//! `(image, recipe)`.

mod camera;
mod filters;
mod sets;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::rng_for;

pub use camera::camera_degradation;
pub use filters::{disk_kernel, gaussian_taps, motion_kernel};
pub use sets::{build_set_r, build_set_s, select_set_r_indices, SetR, SetS, HIGH_QUALITY_MOS, SET_S_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Clean,
    LowLight,
    HighLight,
    Blur,
    Defocus,
    #[serde(rename = "downsample_2x")]
    Downsample2x,
    GaussianNoise,
    GaussianBlur,
    JpegCompression,
    MotionBlur,
    SunFlare,
    IsoNoise,
    Shadow,
    ZoomBlur,
    #[serde(rename = "mixed_extra_1")]
    MixedExtra1,
    #[serde(rename = "mixed_extra_2")]
    MixedExtra2,
}

impl Family {
    /// All families in canonical order; this order fixes Set S layout.
    pub const ALL: [Family; 16] = [
        Family::Clean,
        Family::LowLight,
        Family::HighLight,
        Family::Blur,
        Family::Defocus,
        Family::Downsample2x,
        Family::GaussianNoise,
        Family::GaussianBlur,
        Family::JpegCompression,
        Family::MotionBlur,
        Family::SunFlare,
        Family::IsoNoise,
        Family::Shadow,
        Family::ZoomBlur,
        Family::MixedExtra1,
        Family::MixedExtra2,
    ];

    /// The six families of the retrieval benchmark.
    pub const BENCHMARK: [Family; 6] = [
        Family::LowLight,
        Family::HighLight,
        Family::GaussianBlur,
        Family::GaussianNoise,
        Family::JpegCompression,
        Family::MotionBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Clean => "clean",
            Family::LowLight => "low_light",
            Family::HighLight => "high_light",
            Family::Blur => "blur",
            Family::Defocus => "defocus",
            Family::Downsample2x => "downsample_2x",
            Family::GaussianNoise => "gaussian_noise",
            Family::GaussianBlur => "gaussian_blur",
            Family::JpegCompression => "jpeg_compression",
            Family::MotionBlur => "motion_blur",
            Family::SunFlare => "sun_flare",
            Family::IsoNoise => "iso_noise",
            Family::Shadow => "shadow",
            Family::ZoomBlur => "zoom_blur",
            Family::MixedExtra1 => "mixed_extra_1",
            Family::MixedExtra2 => "mixed_extra_2",
        }
    }

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).unwrap()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    Integer,
    OddInteger,
}

/// How a parameter relates to degradation severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Increasing,
    Decreasing,
    /// Geometry or placement; drawn uniformly regardless of strength.
    Free,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub kind: ParamKind,
    pub severity: Severity,
}

const fn spec(name: &'static str, lo: f64, hi: f64, kind: ParamKind, severity: Severity) -> ParamSpec {
    ParamSpec {
        name,
        lo,
        hi,
        kind,
        severity,
    }
}

use ParamKind::*;
use Severity::*;

/// Parameter ranges for every family.
pub fn param_specs(family: Family) -> &'static [ParamSpec] {
    match family {
        Family::Clean | Family::Downsample2x => &[],
        Family::LowLight => const { &[spec("gain", 0.2, 0.5, Real, Decreasing)] },
        Family::HighLight => const { &[spec("gain", 1.5, 2.5, Real, Increasing)] },
        Family::Blur => const { &[spec("kernel_size", 3.0, 11.0, OddInteger, Increasing)] },
        Family::Defocus => const { &[spec("radius", 1.5, 5.0, Real, Increasing)] },
        Family::GaussianNoise => const { &[spec("sigma", 0.04, 0.2, Real, Increasing)] },
        // sigma is derived from kernel_size when sampled; any value in range is accepted.
        Family::GaussianBlur => const { &[
            spec("kernel_size", 3.0, 31.0, OddInteger, Increasing),
            spec("sigma", 0.3, 8.0, Real, Increasing),
        ] },
        Family::JpegCompression => const { &[spec("quality", 1.0, 30.0, Integer, Decreasing)] },
        Family::MotionBlur => const { &[
            spec("length", 3.0, 15.0, OddInteger, Increasing),
            spec("angle", 0.0, 180.0, Real, Free),
        ] },
        Family::SunFlare => const { &[
            spec("center_x", 0.1, 0.9, Real, Free),
            spec("center_y", 0.05, 0.5, Real, Free),
            spec("radius", 0.15, 0.4, Real, Free),
            spec("intensity", 0.4, 1.0, Real, Increasing),
        ] },
        Family::IsoNoise => const { &[
            spec("color_shift", 0.01, 0.05, Real, Increasing),
            spec("intensity", 0.1, 0.5, Real, Increasing),
        ] },
        Family::Shadow => const { &[
            spec("top_x", 0.2, 0.8, Real, Free),
            spec("bottom_x", 0.2, 0.8, Real, Free),
            spec("side", 0.0, 1.0, Real, Free),
            spec("darkness", 0.3, 0.7, Real, Increasing),
        ] },
        Family::ZoomBlur => const { &[spec("max_factor", 1.05, 1.35, Real, Increasing)] },
        Family::MixedExtra1 => const { &[
            spec("blur_sigma", 0.8, 2.5, Real, Increasing),
            spec("noise_sigma", 0.02, 0.1, Real, Increasing),
        ] },
        Family::MixedExtra2 => const { &[
            spec("gain", 0.5, 0.8, Real, Decreasing),
            spec("quality", 5.0, 30.0, Integer, Decreasing),
        ] },
    }
}

/// Default sigma for a Gaussian kernel of the given size.
pub fn gaussian_sigma_for_kernel(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// A degradation family with concrete parameters and the seed of its noise stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Recipe {
    pub fn clean() -> Self {
        Self {
            family: Family::Clean,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params.get(name).copied().ok_or_else(|| Error::MissingParam {
            family: self.family.to_string(),
            param: name.to_string(),
        })
    }

    /// Checks presence, range and integrality of every parameter the family needs.
    pub fn validate(&self) -> Result<()> {
        let specs = param_specs(self.family);
        for key in self.params.keys() {
            if !specs.iter().any(|s| s.name == key) {
                return Err(Error::ParamOutOfRange {
                    family: self.family.to_string(),
                    param: key.clone(),
                    value: self.params[key],
                    lo: f64::NAN,
                    hi: f64::NAN,
                });
            }
        }
        for s in specs {
            let v = self.param(s.name)?;
            let integral_ok = match s.kind {
                Real => true,
                Integer => v.fract() == 0.0,
                OddInteger => v.fract() == 0.0 && (v as i64) % 2 == 1,
            };
            if !v.is_finite() || v < s.lo || v > s.hi || !integral_ok {
                return Err(Error::ParamOutOfRange {
                    family: self.family.to_string(),
                    param: s.name.to_string(),
                    value: v,
                    lo: s.lo,
                    hi: s.hi,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("recipe serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        if let Some(name) = value.get("family").and_then(|f| f.as_str()) {
            name.parse::<Family>()?;
        }
        Ok(serde_json::from_value(value)?)
    }
}

fn snap(spec: &ParamSpec, v: f64) -> f64 {
    match spec.kind {
        Real => v.clamp(spec.lo, spec.hi),
        Integer => v.round().clamp(spec.lo, spec.hi),
        OddInteger => {
            let k = ((v - 1.0) / 2.0).round() * 2.0 + 1.0;
            k.clamp(spec.lo, spec.hi)
        }
    }
}

fn draw_uniform(spec: &ParamSpec, rng: &mut impl Rng) -> f64 {
    match spec.kind {
        Real => rng.random_range(spec.lo..spec.hi),
        Integer => rng.random_range(spec.lo as i64..=spec.hi as i64) as f64,
        OddInteger => {
            let n = ((spec.hi - spec.lo) / 2.0) as i64;
            spec.lo + 2.0 * rng.random_range(0..=n) as f64
        }
    }
}

fn finalize(family: Family, params: &mut BTreeMap<String, f64>) {
    if family == Family::GaussianBlur {
        let k = params["kernel_size"] as usize;
        params.insert("sigma".into(), gaussian_sigma_for_kernel(k));
    }
}

/// Uniform draw of every parameter within its documented range.
pub fn sample_recipe(family: Family, seed: u64) -> Result<Recipe> {
    if family == Family::Clean {
        return Err(Error::InvalidInput("cannot sample parameters for the clean family".into()));
    }
    let mut rng = rng_for(seed, "recipe", family.index() as u64);
    let mut params = BTreeMap::new();
    for s in param_specs(family) {
        params.insert(s.name.to_string(), draw_uniform(s, &mut rng));
    }
    finalize(family, &mut params);
    Ok(Recipe {
        family,
        params,
        seed: rng.random(),
    })
}

/// Severity parameters placed at `strength` in `[0, 1]` along their range
/// (0 mildest, 1 harshest); free parameters drawn uniformly.
pub fn recipe_at_strength(family: Family, strength: f64, seed: u64) -> Result<Recipe> {
    if family == Family::Clean {
        return Ok(Recipe::clean());
    }
    let s = strength.clamp(0.0, 1.0);
    let mut rng = rng_for(seed, "recipe_strength", family.index() as u64);
    let mut params = BTreeMap::new();
    for p in param_specs(family) {
        let v = match p.severity {
            Increasing => snap(p, p.lo + s * (p.hi - p.lo)),
            Decreasing => snap(p, p.hi - s * (p.hi - p.lo)),
            Free => draw_uniform(p, &mut rng),
        };
        params.insert(p.name.to_string(), v);
    }
    finalize(family, &mut params);
    Ok(Recipe {
        family,
        params,
        seed: rng.random(),
    })
}

/// Applies `recipe` to `image`. Output keeps the input size and is clamped to `[0, 1]`.
pub fn apply_degradation(image: &ImageBuffer, recipe: &Recipe) -> Result<ImageBuffer> {
    recipe.validate()?;
    let p = |name: &str| recipe.param(name);
    let mut rng = rng_for(recipe.seed, "degradation", recipe.family.index() as u64);
    let mut out = match recipe.family {
        Family::Clean => return Ok(image.clone()),
        Family::LowLight | Family::HighLight => filters::scale_brightness(image, p("gain")?),
        Family::Blur => {
            let k = p("kernel_size")? as usize;
            filters::separable(image, &vec![1.0 / k as f32; k])
        }
        Family::Defocus => {
            let (k, n) = filters::disk_kernel(p("radius")?);
            filters::convolve2d(image, &k, n)
        }
        Family::Downsample2x => image
            .downsample_2x()
            .resize_bicubic(image.height(), image.width()),
        Family::GaussianNoise => filters::add_gaussian_noise(image, p("sigma")?, &mut rng),
        Family::GaussianBlur => {
            let taps = filters::gaussian_taps(p("kernel_size")? as usize, p("sigma")?);
            filters::separable(image, &taps)
        }
        Family::JpegCompression => filters::jpeg_roundtrip(image, p("quality")? as u8),
        Family::MotionBlur => {
            let (k, n) = filters::motion_kernel(p("length")? as usize, p("angle")?);
            filters::convolve2d(image, &k, n)
        }
        Family::SunFlare => filters::sun_flare(
            image,
            p("center_x")?,
            p("center_y")?,
            p("radius")?,
            p("intensity")?,
        ),
        Family::IsoNoise => filters::iso_noise(image, p("color_shift")?, p("intensity")?, &mut rng),
        Family::Shadow => filters::shadow(
            image,
            p("top_x")?,
            p("bottom_x")?,
            p("side")? < 0.5,
            p("darkness")?,
        ),
        Family::ZoomBlur => filters::zoom_blur(image, p("max_factor")?),
        Family::MixedExtra1 => {
            let sigma = p("blur_sigma")?;
            let size = (2.0 * (3.0 * sigma).ceil() + 1.0) as usize;
            let blurred = filters::separable(image, &filters::gaussian_taps(size, sigma));
            filters::add_gaussian_noise(&blurred, p("noise_sigma")?, &mut rng)
        }
        Family::MixedExtra2 => {
            let mut dark = filters::scale_brightness(image, p("gain")?);
            dark.clamp01();
            filters::jpeg_roundtrip(&dark, p("quality")? as u8)
        }
    };
    out.clamp01();
    Ok(out)
}
