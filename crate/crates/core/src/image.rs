//! RGB image buffer with pixels in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, row-major, `height * width * 3` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}x3"),
                got: format!("{} samples", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    /// Bilinear sample at continuous pixel coordinates, border-clamped.
    pub fn sample_bilinear(&self, y: f32, x: f32, c: usize) -> f32 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.get_clamped(y0, x0, c);
        let b = self.get_clamped(y0, x0 + 1, c);
        let d = self.get_clamped(y0 + 1, x0, c);
        let e = self.get_clamped(y0 + 1, x0 + 1, c);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::RectOutOfBounds {
                rect: (x0, y0, w, h),
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.pixel(y, self.width - 1 - x))
    }

    /// Channel-major `[3, H, W]` copy in f64, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f64;
            }
        }
        out
    }

    /// 2x2 box average; odd trailing rows/columns are dropped.
    pub fn downsample_2x(&self) -> Self {
        let h = (self.height / 2).max(1);
        let w = (self.width / 2).max(1);
        Self::from_fn(h, w, |y, x| {
            let mut acc = [0.0f32; 3];
            for dy in 0..2 {
                for dx in 0..2 {
                    let yy = (2 * y + dy).min(self.height - 1);
                    let xx = (2 * x + dx).min(self.width - 1);
                    let p = self.pixel(yy, xx);
                    for c in 0..3 {
                        acc[c] += p[c] * 0.25;
                    }
                }
            }
            acc
        })
    }

    /// Bicubic resampling (Keys kernel, a = -0.5) with half-pixel centers.
    pub fn resize_bicubic(&self, height: usize, width: usize) -> Self {
        fn keys(t: f32) -> f32 {
            let a = -0.5f32;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
            } else if t < 2.0 {
                a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Self::from_fn(height, width, |y, x| {
            let fy = (y as f32 + 0.5) * sy - 0.5;
            let fx = (x as f32 + 0.5) * sx - 0.5;
            let iy = fy.floor() as isize;
            let ix = fx.floor() as isize;
            let mut acc = [0.0f32; 3];
            for m in -1..=2isize {
                let wy = keys(fy - (iy + m) as f32);
                for n in -1..=2isize {
                    let w = wy * keys(fx - (ix + n) as f32);
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += w * self.get_clamped(iy + m, ix + n, c);
                    }
                }
            }
            acc
        });
        out.clamp01();
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert_eq!((a.height, a.width), (b.height, b.width));
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
