//! A simulated capture pipeline for the toy "real-world" data. It produces
//! the benchmark families through different mechanisms than the synthetic
//! recipes (tone curves, signal-dependent correlated noise, anisotropic lens
//! blur, misaligned double JPEG, curved camera shake), so synthetic and
//! real-style images of one family share a category but not a generator.

use rand::Rng;
use rand_distr::StandardNormal;

use super::filters::{convolve2d, jpeg_roundtrip};
use super::{apply_degradation, gaussian_taps, recipe_at_strength, Family};
use crate::error::Result;
use crate::image::ImageBuffer;
use crate::rng::rng_for;

fn tone(img: &ImageBuffer, f: impl Fn(f32) -> f32, cast: [f32; 3]) -> ImageBuffer {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for (v, c) in px.iter_mut().zip(cast) {
            *v = f(*v) * c;
        }
    }
    out
}

fn separable_xy(img: &ImageBuffer, tx: &[f32], ty: &[f32]) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let (rx, ry) = ((tx.len() / 2) as isize, (ty.len() / 2) as isize);
    let tmp = ImageBuffer::from_fn(h, w, |y, x| {
        std::array::from_fn(|c| {
            tx.iter()
                .enumerate()
                .map(|(k, t)| t * img.get_clamped(y as isize, x as isize + k as isize - rx, c))
                .sum()
        })
    });
    ImageBuffer::from_fn(h, w, |y, x| {
        std::array::from_fn(|c| {
            ty.iter()
                .enumerate()
                .map(|(k, t)| t * tmp.get_clamped(y as isize + k as isize - ry, x as isize, c))
                .sum()
        })
    })
}

fn taps_for(sigma: f64) -> Vec<f32> {
    let size = 2 * (3.0 * sigma).ceil() as usize + 1;
    gaussian_taps(size, sigma)
}

/// Noise field with a shared luminance component, blurred by a 1-2-1 kernel
/// as demosaicing would, rescaled back to unit variance.
fn correlated_noise(h: usize, w: usize, rng: &mut impl Rng) -> Vec<[f32; 3]> {
    let raw: Vec<[f32; 3]> = (0..h * w)
        .map(|_| {
            let lum: f32 = rng.sample(StandardNormal);
            std::array::from_fn(|_| 0.8 * lum + 0.6 * rng.sample::<f32, _>(StandardNormal))
        })
        .collect();
    let k = [0.25f32, 0.5, 0.25];
    // variance of the 3x3 product kernel: (0.25^2 + 0.5^2 + 0.25^2)^2
    let norm = 1.0 / 0.375f32;
    let at = |y: isize, x: isize| raw[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut acc = [0.0f32; 3];
            for (dy, ky) in (-1..=1).zip(k) {
                for (dx, kx) in (-1..=1).zip(k) {
                    let v = at(y + dy, x + dx);
                    for c in 0..3 {
                        acc[c] += ky * kx * v[c];
                    }
                }
            }
            acc.map(|a| a * norm)
        })
        .collect()
}

/// Curved shake trajectory of roughly `length` pixels, splatted bilinearly.
fn shake_kernel(length: f64, rng: &mut impl Rng) -> (Vec<f32>, usize) {
    let steps = (4.0 * length).ceil() as usize + 1;
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let turn: f64 = rng.random_range(-0.25..0.25);
    let mut pts = vec![(0.0f64, 0.0f64)];
    for _ in 1..steps {
        heading += turn + rng.random_range(-0.15..0.15);
        let (py, px) = *pts.last().unwrap();
        pts.push((py + 0.25 * heading.sin(), px + 0.25 * heading.cos()));
    }
    let my = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let r = pts
        .iter()
        .map(|p| (p.0 - my).abs().max((p.1 - mx).abs()))
        .fold(0.0, f64::max)
        .ceil() as usize
        + 1;
    let size = 2 * r + 1;
    let mut k = vec![0.0f32; size * size];
    for (py, px) in pts {
        let (y, x) = (py - my + r as f64, px - mx + r as f64);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as usize + dy, x0 as usize + dx);
                if yy < size && xx < size {
                    k[yy * size + xx] += wy * wx;
                }
            }
        }
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    (k, size)
}

fn roll(img: &ImageBuffer, dy: usize, dx: usize) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    ImageBuffer::from_fn(h, w, |y, x| img.pixel((y + dy) % h, (x + dx) % w))
}

/// Capture-pipeline version of `family` at `strength` in `[0, 1]`. Families
/// outside the benchmark set fall back to the synthetic recipe.
pub fn camera_degradation(image: &ImageBuffer, family: Family, strength: f64, seed: u64) -> Result<ImageBuffer> {
    let s = strength.clamp(0.0, 1.0);
    let mut rng = rng_for(seed, "camera", family.index() as u64);
    let (h, w) = (image.height(), image.width());
    let mut out = match family {
        Family::LowLight => {
            let exposure = (0.65 - 0.4 * s) as f32;
            let dark = tone(image, |v| exposure * v.max(0.0).powf(1.3), [0.97, 1.0, 1.08]);
            let noise = correlated_noise(h, w, &mut rng);
            let sigma = (0.01 + 0.03 * s) as f32;
            let mut out = dark.clone();
            for (px, n) in out.data_mut().chunks_exact_mut(3).zip(noise) {
                for (v, e) in px.iter_mut().zip(n) {
                    *v += sigma * (v.max(0.0) + 0.02).sqrt() * e;
                }
            }
            out
        }
        Family::HighLight => {
            let g = (1.3 + 2.2 * s) as f32;
            tone(image, |v| 1.0 - (1.0 - v.clamp(0.0, 1.0)).powf(g), [1.04, 1.0, 0.95])
        }
        Family::GaussianBlur => {
            let major = 0.6 + 3.4 * s;
            let minor = major * rng.random_range(0.45..0.85);
            let (sx, sy) = if rng.random_bool(0.5) { (major, minor) } else { (minor, major) };
            separable_xy(image, &taps_for(sx), &taps_for(sy))
        }
        Family::GaussianNoise => {
            let sigma = (0.03 + 0.12 * s) as f32;
            let noise = correlated_noise(h, w, &mut rng);
            let mut out = image.clone();
            for (px, n) in out.data_mut().chunks_exact_mut(3).zip(noise) {
                for (v, e) in px.iter_mut().zip(n) {
                    *v += sigma * (0.4 + 0.8 * v.max(0.0).sqrt()) * e;
                }
            }
            out
        }
        Family::JpegCompression => {
            let first = jpeg_roundtrip(image, rng.random_range(40..=70));
            let (dy, dx) = (rng.random_range(1..8), rng.random_range(1..8));
            let q = (25.0 - 23.0 * s).round().clamp(2.0, 30.0) as u8;
            let second = jpeg_roundtrip(&roll(&first, dy, dx), q);
            roll(&second, h - dy, w - dx)
        }
        Family::MotionBlur => {
            let (k, n) = shake_kernel(3.0 + 12.0 * s, &mut rng);
            convolve2d(image, &k, n)
        }
        _ => return apply_degradation(image, &recipe_at_strength(family, strength, rng.random())?),
    };
    out.clamp01();
    Ok(out)
}
