use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::substream;

use super::{io_err, DataError, IMAGE_PIXELS, IMAGE_SIZE};

pub const NUM_TEXTURES: usize = 10;
/// Side length of procedural textures.
pub const PROCEDURAL_SIZE: usize = 96;

const GRATING_LO: f64 = 64.0;
const GRATING_HI: f64 = 192.0;
const NOISE_AMPLITUDE: i32 = 20;
const IMAGE_EXTENSIONS: [&str; 8] = ["png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "webp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Texture {
    pub width: usize,
    pub height: usize,
    /// Row-major grayscale.
    pub pixels: Vec<u8>,
}

impl Texture {
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum TextureSource {
    ExternalDirectory(PathBuf),
    Procedural,
}

impl TextureSource {
    pub fn kind(&self) -> &'static str {
        match self {
            TextureSource::ExternalDirectory(_) => "external_directory",
            TextureSource::Procedural => "procedural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureBank {
    /// Index is the texture class.
    pub textures: Vec<Texture>,
    pub source: TextureSource,
    pub seed: u64,
    /// File names, or `procedural:<k>`.
    pub provenance: Vec<String>,
}

/// Texture `k`: a two-level grating at `k * 18` degrees with period `3 + k`
/// pixels, plus seeded uniform noise in `[-20, 20]`.
pub fn procedural_texture(k: usize, seed: u64) -> Texture {
    let theta = (k as f64 * 18.0).to_radians();
    let period = 3.0 + k as f64;
    let (s, c) = theta.sin_cos();
    let mut rng = substream(&[seed, 0x7E47, k as u64]);
    let n = PROCEDURAL_SIZE;
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let u = x as f64 * c + y as f64 * s;
            let base = if (std::f64::consts::TAU * u / period).sin() >= 0.0 {
                GRATING_HI
            } else {
                GRATING_LO
            };
            let noise = rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            pixels.push((base as i32 + noise).clamp(0, 255) as u8);
        }
    }
    Texture {
        width: n,
        height: n,
        pixels,
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_luma(path: &Path) -> Result<Texture, DataError> {
    let img = image::open(path).map_err(|e| DataError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let luma = img.to_luma8();
    Ok(Texture {
        width: luma.width() as usize,
        height: luma.height() as usize,
        pixels: luma.into_raw(),
    })
}

pub fn build_texture_bank(source: &TextureSource, seed: u64) -> Result<TextureBank, DataError> {
    let (textures, provenance) = match source {
        TextureSource::Procedural => (
            (0..NUM_TEXTURES).map(|k| procedural_texture(k, seed)).collect(),
            (0..NUM_TEXTURES).map(|k| format!("procedural:{k}")).collect(),
        ),
        TextureSource::ExternalDirectory(dir) => {
            let mut files = list_images(dir)?;
            if files.len() < NUM_TEXTURES {
                return Err(DataError::InsufficientTextures { found: files.len() });
            }
            files.shuffle(&mut substream(&[seed, 0x7E48]));
            files.truncate(NUM_TEXTURES);
            let textures = files.iter().map(|p| load_luma(p)).collect::<Result<Vec<_>, _>>()?;
            let names = files
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            (textures, names)
        }
    };
    for (id, t) in textures.iter().enumerate() {
        if t.width < IMAGE_SIZE || t.height < IMAGE_SIZE {
            return Err(DataError::TextureTooSmall {
                id,
                width: t.width,
                height: t.height,
            });
        }
    }
    Ok(TextureBank {
        textures,
        source: source.clone(),
        seed,
        provenance,
    })
}

/// A 32x32 crop at a uniformly random valid corner.
pub fn crop_texture<R: Rng + ?Sized>(
    bank: &TextureBank,
    texture_id: usize,
    rng: &mut R,
) -> Result<[u8; IMAGE_PIXELS], DataError> {
    let t = &bank.textures[texture_id];
    if t.width < IMAGE_SIZE || t.height < IMAGE_SIZE {
        return Err(DataError::TextureTooSmall {
            id: texture_id,
            width: t.width,
            height: t.height,
        });
    }
    let top = rng.random_range(0..=t.height - IMAGE_SIZE);
    let left = rng.random_range(0..=t.width - IMAGE_SIZE);
    let mut out = [0u8; IMAGE_PIXELS];
    for r in 0..IMAGE_SIZE {
        let src = (top + r) * t.width + left;
        out[r * IMAGE_SIZE..(r + 1) * IMAGE_SIZE].copy_from_slice(&t.pixels[src..src + IMAGE_SIZE]);
    }
    Ok(out)
}
