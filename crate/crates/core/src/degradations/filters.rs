//! Convolution kernels and the per-family pixel operations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::ImageBuffer;

/// 1D Gaussian taps, normalized to unit sum.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f32> {
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps.into_iter().map(|t| t as f32).collect()
}

/// Horizontal then vertical pass with border replication.
pub fn separable(img: &ImageBuffer, taps: &[f32]) -> ImageBuffer {
    let r = (taps.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let tmp = ImageBuffer::from_fn(h, w, |y, x| {
        let mut acc = [0.0f32; 3];
        for (k, &t) in taps.iter().enumerate() {
            let xx = x as isize + k as isize - r;
            for (c, a) in acc.iter_mut().enumerate() {
                *a += t * img.get_clamped(y as isize, xx, c);
            }
        }
        acc
    });
    ImageBuffer::from_fn(h, w, |y, x| {
        let mut acc = [0.0f32; 3];
        for (k, &t) in taps.iter().enumerate() {
            let yy = y as isize + k as isize - r;
            for (c, a) in acc.iter_mut().enumerate() {
                *a += t * tmp.get_clamped(yy, x as isize, c);
            }
        }
        acc
    })
}

/// Dense 2D kernel, `size x size`, row-major, centered.
pub fn convolve2d(img: &ImageBuffer, kernel: &[f32], size: usize) -> ImageBuffer {
    debug_assert_eq!(kernel.len(), size * size);
    let r = (size / 2) as isize;
    let taps: Vec<(isize, isize, f32)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, &k)| k != 0.0)
        .map(|(i, &k)| ((i / size) as isize - r, (i % size) as isize - r, k))
        .collect();
    ImageBuffer::from_fn(img.height(), img.width(), |y, x| {
        let mut acc = [0.0f32; 3];
        for &(dy, dx, k) in &taps {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += k * img.get_clamped(y as isize + dy, x as isize + dx, c);
            }
        }
        acc
    })
}

fn normalize(kernel: &mut [f32]) {
    let s: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);
}

/// Uniform disk of the given radius, antialiased at the rim.
pub fn disk_kernel(radius: f64) -> (Vec<f32>, usize) {
    let r = radius.ceil() as isize;
    let size = (2 * r + 1) as usize;
    let mut k = vec![0.0f32; size * size];
    for y in -r..=r {
        for x in -r..=r {
            let d = ((x * x + y * y) as f64).sqrt();
            let v = (radius + 0.5 - d).clamp(0.0, 1.0);
            k[((y + r) as usize) * size + (x + r) as usize] = v as f32;
        }
    }
    normalize(&mut k);
    (k, size)
}

/// Line segment of `length` pixels through the center at `angle_deg`.
pub fn motion_kernel(length: usize, angle_deg: f64) -> (Vec<f32>, usize) {
    let size = length;
    let r = (size / 2) as f64;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut k = vec![0.0f32; size * size];
    let steps = 4 * size;
    for i in 0..=steps {
        let t = -r + 2.0 * r * i as f64 / steps as f64;
        let x = (r + t * c).round() as usize;
        let y = (r - t * s).round() as usize;
        k[y.min(size - 1) * size + x.min(size - 1)] += 1.0;
    }
    normalize(&mut k);
    (k, size)
}

pub fn scale_brightness(img: &ImageBuffer, gain: f64) -> ImageBuffer {
    let mut out = img.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= gain as f32);
    out
}

pub fn add_gaussian_noise(img: &ImageBuffer, sigma: f64, rng: &mut impl Rng) -> ImageBuffer {
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += (sigma * n) as f32;
    }
    out
}

/// Sensor-style noise: luminance-dependent grain plus per-pixel chroma jitter.
pub fn iso_noise(img: &ImageBuffer, color_shift: f64, intensity: f64, rng: &mut impl Rng) -> ImageBuffer {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let lum = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) as f64;
        let grain: f64 = rng.sample::<f64, _>(StandardNormal) * intensity * 0.25 * (lum + 0.05).sqrt();
        for v in px.iter_mut() {
            let chroma: f64 = rng.sample::<f64, _>(StandardNormal) * color_shift;
            *v += (grain + chroma) as f32;
        }
    }
    out
}

pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u8) -> ImageBuffer {
    use image::codecs::jpeg::JpegEncoder;
    let rgb = img.to_rgb8();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .expect("in-memory JPEG encode");
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .expect("decode of freshly encoded JPEG")
        .to_rgb8();
    ImageBuffer::from_rgb8(&decoded)
}

/// Average of copies scaled about the image center, from 1 to `max_factor`.
pub fn zoom_blur(img: &ImageBuffer, max_factor: f64) -> ImageBuffer {
    let steps = 8;
    let (h, w) = (img.height(), img.width());
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    ImageBuffer::from_fn(h, w, |y, x| {
        let mut acc = [0.0f32; 3];
        for s in 0..steps {
            let f = 1.0 + (max_factor - 1.0) * s as f64 / (steps - 1) as f64;
            let sy = cy + (y as f32 - cy) / f as f32;
            let sx = cx + (x as f32 - cx) / f as f32;
            for (c, a) in acc.iter_mut().enumerate() {
                *a += img.sample_bilinear(sy, sx, c) / steps as f32;
            }
        }
        acc
    })
}

/// Additive radial glow plus two faint halo rings along the flare axis.
pub fn sun_flare(img: &ImageBuffer, cx: f64, cy: f64, radius: f64, intensity: f64) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let scale = h.max(w) as f64;
    let halos = [(0.45, 0.35, 0.35), (0.8, 0.2, 0.25)];
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 / scale;
            let py = y as f64 / scale;
            let d2 = (px - cx).powi(2) + (py - cy).powi(2);
            let mut glow = intensity * (-d2 / (2.0 * radius * radius)).exp();
            for &(t, r, a) in &halos {
                let hx = cx + t * (0.5 - cx) * 2.0;
                let hy = cy + t * (0.5 - cy) * 2.0;
                let dh = ((px - hx).powi(2) + (py - hy).powi(2)).sqrt();
                let ring = (-(dh - r * radius).powi(2) / (2.0 * 0.02f64.powi(2))).exp();
                glow += a * intensity * ring;
            }
            let tint = [1.0, 0.95, 0.8];
            for (c, t) in tint.iter().enumerate() {
                let v = out.get(y, x, c) + (glow * t) as f32;
                out.set(y, x, c, v);
            }
        }
    }
    out
}

/// Darkens the region on one side of the line from `(top_x, 0)` to `(bottom_x, 1)`.
pub fn shadow(img: &ImageBuffer, top_x: f64, bottom_x: f64, left_side: bool, darkness: f64) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for y in 0..h {
        let t = (y as f64 + 0.5) / h as f64;
        let edge = (top_x + (bottom_x - top_x) * t) * w as f64;
        for x in 0..w {
            let d = x as f64 + 0.5 - edge;
            let inside = if left_side { -d } else { d };
            let m = (inside + 0.5).clamp(0.0, 1.0);
            let gain = 1.0 - darkness * m;
            for c in 0..3 {
                let v = out.get(y, x, c) * gain as f32;
                out.set(y, x, c, v);
            }
        }
    }
    out
}
