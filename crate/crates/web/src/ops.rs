use fiqa_core::degradations::{apply_degradation, camera_degradation, recipe_at_strength, Family, Recipe};
use fiqa_core::face::FaceSpec;
use fiqa_core::image::{psnr, ImageBuffer};
use fiqa_core::{Error, Result};

pub const MIN_SIZE: usize = 16;
pub const MAX_SIZE: usize = 512;

pub fn families() -> Vec<&'static str> {
    Family::ALL.iter().filter(|&&f| f != Family::Clean).map(|f| f.name()).collect()
}

fn check_size(size: usize) -> Result<()> {
    if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
        return Err(Error::InvalidConfig(format!("size must lie in {MIN_SIZE}..={MAX_SIZE}, got {size}")));
    }
    Ok(())
}

fn parse_family(name: &str) -> Result<Family> {
    match name.parse()? {
        Family::Clean => Err(Error::UnknownFamily(name.to_string())),
        f => Ok(f),
    }
}

pub fn render_face(face_seed: u64, size: usize) -> Result<ImageBuffer> {
    check_size(size)?;
    Ok(FaceSpec::random(face_seed).render(size, size))
}

pub fn recipe(family: &str, strength: f64, seed: u64) -> Result<Recipe> {
    recipe_at_strength(parse_family(family)?, strength, seed)
}

pub fn degrade(face_seed: u64, size: usize, family: &str, strength: f64, seed: u64) -> Result<ImageBuffer> {
    apply_degradation(&render_face(face_seed, size)?, &recipe(family, strength, seed)?)
}

pub fn capture(face_seed: u64, size: usize, family: &str, strength: f64, seed: u64) -> Result<ImageBuffer> {
    camera_degradation(&render_face(face_seed, size)?, parse_family(family)?, strength, seed)
}

pub fn degraded_psnr(face_seed: u64, size: usize, family: &str, strength: f64, seed: u64) -> Result<f64> {
    let clean = render_face(face_seed, size)?;
    Ok(psnr(&clean, &apply_degradation(&clean, &recipe(family, strength, seed)?)?))
}

pub fn family_strip(face_seed: u64, size: usize, strength: f64, seed: u64) -> Result<ImageBuffer> {
    let clean = render_face(face_seed, size)?;
    let tiles = Family::BENCHMARK
        .iter()
        .map(|&f| apply_degradation(&clean, &recipe_at_strength(f, strength, seed)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageBuffer::from_fn(size, size * tiles.len(), |y, x| tiles[x / size].pixel(y, x % size)))
}

/// Row-major RGBA8 with opaque alpha.
pub fn to_rgba(img: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.height() * img.width() * 4);
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in img.pixel(y, x) {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}
