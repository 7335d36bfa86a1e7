//! Procedural face-like images for toy datasets.
//!
//! A [`FaceSpec`] fixes the geometry, colors and texture of one synthetic
//! face; it renders deterministically at any resolution and drives the
//! synthetic 68-point landmark layout in [`crate::landmarks`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Gender, SkinTone};
use crate::image::ImageBuffer;
use crate::rng::rng_for;

/// All lengths are fractions of the image side; `y` grows downwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceSpec {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_r: f64,
    pub nose_len: f64,
    pub nose_w: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
    pub mouth_h: f64,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub iris: [f32; 3],
    pub bg_top: [f32; 3],
    pub bg_bottom: [f32; 3],
    pub stripe_freq: f64,
    pub stripe_angle: f64,
    pub skin_texture: f64,
    pub occluder: Option<(f64, f64, f64, f64)>,
    pub skin_tone: SkinTone,
    pub gender: Gender,
}

const SKIN_TONES: [(SkinTone, [f32; 3]); 3] = [
    (SkinTone::Light, [0.93, 0.78, 0.68]),
    (SkinTone::Medium, [0.78, 0.58, 0.42]),
    (SkinTone::Dark, [0.45, 0.30, 0.21]),
];

fn jitter(c: [f32; 3], amount: f32, rng: &mut impl Rng) -> [f32; 3] {
    c.map(|v| (v + rng.random_range(-amount..amount)).clamp(0.02, 0.98))
}

impl FaceSpec {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_for(seed, "face", 0);
        let cx = rng.random_range(0.44..0.56);
        let cy = rng.random_range(0.48..0.56);
        let rx = rng.random_range(0.26..0.33);
        let ry = rng.random_range(0.33..0.40);
        let (tone, base) = SKIN_TONES[rng.random_range(0..3)];
        let gender = if rng.random_bool(0.5) { Gender::Female } else { Gender::Male };
        let occluder = rng.random_bool(0.1).then(|| {
            let w = rng.random_range(0.15..0.3);
            let h = rng.random_range(0.1..0.2);
            (cx + rng.random_range(-0.2..0.2) - w / 2.0, cy + rng.random_range(-0.1..0.3) - h / 2.0, w, h)
        });
        let bg = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        Self {
            center: (cx, cy),
            radii: (rx, ry),
            eye_dx: rx * rng.random_range(0.38..0.46),
            eye_y: cy - ry * rng.random_range(0.18..0.28),
            eye_r: rx * rng.random_range(0.11..0.14),
            nose_len: ry * rng.random_range(0.3..0.38),
            nose_w: rx * rng.random_range(0.22..0.3),
            mouth_y: cy + ry * rng.random_range(0.42..0.55),
            mouth_w: rx * rng.random_range(0.32..0.45),
            mouth_h: ry * rng.random_range(0.07..0.11),
            skin: jitter(base, 0.04, &mut rng),
            hair: jitter([0.15, 0.1, 0.07], 0.08, &mut rng),
            iris: jitter([0.25, 0.3, 0.35], 0.15, &mut rng),
            bg_top: bg.map(|v| v as f32),
            bg_bottom: jitter(bg.map(|v| v as f32 * 0.7), 0.1, &mut rng),
            stripe_freq: rng.random_range(6.0..14.0),
            stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
            skin_texture: rng.random_range(0.02..0.05),
            occluder,
            skin_tone: tone,
            gender,
        }
    }

    pub fn left_eye(&self) -> (f64, f64) {
        (self.center.0 - self.eye_dx, self.eye_y)
    }

    pub fn right_eye(&self) -> (f64, f64) {
        (self.center.0 + self.eye_dx, self.eye_y)
    }

    pub fn render(&self, height: usize, width: usize) -> ImageBuffer {
        let side = height.max(width) as f64;
        let aa = 1.0 / side;
        let mut img = ImageBuffer::from_fn(height, width, |py, px| {
            let x = (px as f64 + 0.5) / side;
            let y = (py as f64 + 0.5) / side;
            self.shade(x, y, aa)
        });
        img.clamp01();
        img
    }

    fn shade(&self, x: f64, y: f64, aa: f64) -> [f32; 3] {
        let (cx, cy) = self.center;
        let (rx, ry) = self.radii;
        let t = y.clamp(0.0, 1.0) as f32;
        let mut c: [f32; 3] = std::array::from_fn(|i| self.bg_top[i] * (1.0 - t) + self.bg_bottom[i] * t);
        // background stripes give every image fine structure to degrade
        let (s, co) = self.stripe_angle.sin_cos();
        let stripe = (std::f64::consts::TAU * self.stripe_freq * (x * co + y * s)).sin();
        c = c.map(|v| v + 0.08 * stripe as f32);

        let blend = |c: &mut [f32; 3], col: [f32; 3], a: f64| {
            let a = a.clamp(0.0, 1.0) as f32;
            for i in 0..3 {
                c[i] = c[i] * (1.0 - a) + col[i] * a;
            }
        };
        let ellipse = |ex: f64, ey: f64, ax: f64, ay: f64| -> f64 {
            let d = (((x - ex) / ax).powi(2) + ((y - ey) / ay).powi(2)).sqrt();
            // signed distance approximation scaled to pixels
            (1.0 - d) * ax.min(ay) / aa + 0.5
        };

        // hair cap behind the face
        blend(&mut c, self.hair, ellipse(cx, cy - ry * 0.25, rx * 1.12, ry * 0.95));
        // face with soft side shading and fine pore texture
        let face_a = ellipse(cx, cy, rx, ry);
        if face_a > 0.0 {
            let shade = 1.0 - 0.25 * (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)) as f32;
            let pore = ((x * 173.0).sin() * (y * 191.0).sin()) as f32 * self.skin_texture as f32;
            let skin = self.skin.map(|v| v * shade + pore);
            blend(&mut c, skin, face_a);
        }
        // fringe
        let fringe = ellipse(cx, cy - ry * 0.85, rx * 0.95, ry * 0.3);
        blend(&mut c, self.hair, fringe);
        // eyes, irises, brows
        for (ex, ey) in [self.left_eye(), self.right_eye()] {
            blend(&mut c, [0.95, 0.95, 0.93], ellipse(ex, ey, self.eye_r * 1.5, self.eye_r * 0.7));
            blend(&mut c, self.iris, ellipse(ex, ey, self.eye_r * 0.55, self.eye_r * 0.55));
            blend(&mut c, [0.03, 0.03, 0.03], ellipse(ex, ey, self.eye_r * 0.25, self.eye_r * 0.25));
            blend(&mut c, self.hair, ellipse(ex, ey - self.eye_r * 2.2, self.eye_r * 1.7, self.eye_r * 0.35));
        }
        // nose ridge and tip
        let nose_mid = self.eye_y + self.nose_len * 0.5;
        let ridge = ellipse(self.center.0, nose_mid, self.nose_w * 0.18, self.nose_len * 0.55);
        blend(&mut c, self.skin.map(|v| v * 0.8), ridge * 0.5);
        blend(
            &mut c,
            self.skin.map(|v| v * 0.7),
            ellipse(self.center.0, self.eye_y + self.nose_len, self.nose_w * 0.5, self.nose_len * 0.18),
        );
        // mouth
        blend(&mut c, [0.7, 0.2, 0.22], ellipse(self.center.0, self.mouth_y, self.mouth_w, self.mouth_h));
        blend(
            &mut c,
            [0.3, 0.05, 0.07],
            ellipse(self.center.0, self.mouth_y, self.mouth_w * 0.7, self.mouth_h * 0.35),
        );
        if let Some((ox, oy, ow, oh)) = self.occluder {
            let inside = ((x - ox).min(ox + ow - x)).min((y - oy).min(oy + oh - y)) / aa + 0.5;
            blend(&mut c, [0.2, 0.22, 0.25], inside);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_render() {
        let a = FaceSpec::random(3);
        assert_eq!(a, FaceSpec::random(3));
        assert_ne!(a, FaceSpec::random(4));
        let img = a.render(32, 32);
        assert!(img.is_valid());
        assert_eq!(img, a.render(32, 32));
    }

    #[test]
    fn face_center_is_skin_colored() {
        let f = FaceSpec::random(11);
        let img = f.render(64, 64);
        let y = ((f.center.1 + f.mouth_y) / 2.0 * 64.0) as usize;
        let x = ((f.center.0 + f.eye_dx * 1.2) * 64.0) as usize;
        let p = img.pixel(y, x);
        for i in 0..3 {
            assert!((p[i] - f.skin[i]).abs() < 0.3, "{p:?} vs {:?}", f.skin);
        }
    }
}
