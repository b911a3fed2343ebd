//! Texture providers: the render manifest handed to external generators,
//! the directory layout they answer with, and a deterministic procedural
//! generator for runs without any model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::ViewCamera;
use crate::error::{Error, Result};
use crate::visibility::read_depth_png;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderManifest {
    pub schema: u32,
    /// Normalized mesh, relative to the manifest's directory.
    pub mesh: PathBuf,
    pub view_resolution: (u32, u32),
    pub uv_resolution: u32,
    pub near: f64,
    pub far: f64,
    pub levels: Vec<ManifestLevel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLevel {
    /// Hit level this layer textures; image file names use it.
    pub level: u32,
    pub prompt: String,
    pub views: Vec<ManifestView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub view: usize,
    pub depth: PathBuf,
    pub camera: ViewCamera,
}

/// `view_L{level}_V{view:02}.png`
pub fn view_image_name(level: u32, view: usize) -> String {
    format!("view_L{level}_V{view:02}.png")
}

/// `depth_L{level}_V{view:02}.png`
pub fn depth_image_name(level: u32, view: usize) -> String {
    format!("depth_L{level}_V{view:02}.png")
}

impl RenderManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("manifest: {msg}")));
        if self.schema != MANIFEST_SCHEMA {
            return bad(format!("unsupported schema {} (expected {MANIFEST_SCHEMA})", self.schema));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return bad(format!("near {} / far {} out of order", self.near, self.far));
        }
        if self.levels.is_empty() {
            return bad("no levels".into());
        }
        let view_count = self.levels[0].views.len();
        let mut previous = 0;
        for level in &self.levels {
            if level.level <= previous {
                return bad(format!("level {} out of order", level.level));
            }
            previous = level.level;
            if level.views.len() != view_count || view_count == 0 {
                return bad(format!("level {} has {} views, expected {view_count}", level.level, level.views.len()));
            }
            for (i, v) in level.views.iter().enumerate() {
                if v.view != i {
                    return bad(format!("level {} lists view {} at position {i}", level.level, v.view));
                }
                if v.camera.resolution != self.view_resolution {
                    return bad(format!(
                        "level {} view {i}: camera resolution {:?} differs from {:?}",
                        level.level, v.camera.resolution, self.view_resolution
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RenderManifest> {
        let manifest: RenderManifest =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("manifest: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<RenderManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RenderManifest::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn view_count(&self) -> usize {
        self.levels.first().map_or(0, |l| l.views.len())
    }

    pub fn entry_count(&self) -> usize {
        self.levels.iter().map(|l| l.views.len()).sum()
    }
}

/// One RGB image per (layer, view), in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderOutput {
    pub levels: Vec<u32>,
    pub images: Vec<Vec<RgbImage>>,
}

impl ProviderOutput {
    /// Writes the images in the directory-provider layout.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (&level, views) in self.levels.iter().zip(&self.images) {
            for (v, img) in views.iter().enumerate() {
                let path = dir.join(view_image_name(level, v));
                img.save(&path).map_err(|e| Error::image(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Per-level content for the procedural provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    Solid { color: [u8; 3] },
    /// Screen-space checkerboard with square cells of `cell` pixels.
    Checker { a: [u8; 3], b: [u8; 3], cell: u32 },
    /// `base` plus uniform per-pixel noise in `[-amplitude, amplitude]`.
    Noise { base: [u8; 3], amplitude: u8 },
}

const DEFAULT_COLORS: [[u8; 3]; 8] = [
    [255, 0, 0],
    [0, 0, 255],
    [0, 200, 0],
    [255, 220, 0],
    [255, 0, 255],
    [0, 220, 220],
    [255, 128, 0],
    [128, 128, 128],
];

/// Patterns keyed by hit level. Levels without an entry get a solid colour
/// from a fixed list: 1 red, 2 blue, 3 green, 4 yellow, …
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Palette(pub BTreeMap<u32, Pattern>);

impl Palette {
    pub fn pattern(&self, level: u32) -> Pattern {
        self.0.get(&level).cloned().unwrap_or(Pattern::Solid {
            color: DEFAULT_COLORS[(level.max(1) as usize - 1) % DEFAULT_COLORS.len()],
        })
    }
}

/// Fills every pixel with finite depth according to the level's pattern;
/// background stays black. Depth paths resolve against `base`.
pub fn procedural_generate_views(
    manifest: &RenderManifest,
    base: &Path,
    seed: u64,
    palette: &Palette,
) -> Result<ProviderOutput> {
    let jobs: Vec<(usize, usize)> = manifest
        .levels
        .iter()
        .enumerate()
        .flat_map(|(l, level)| (0..level.views.len()).map(move |v| (l, v)))
        .collect();
    let rendered: Vec<RgbImage> = jobs
        .par_iter()
        .map(|&(l, v)| {
            let level = &manifest.levels[l];
            let depth = read_depth_png(&base.join(&level.views[v].depth))?;
            Ok(paint(&depth, &palette.pattern(level.level), image_seed(seed, level.level, v)))
        })
        .collect::<Result<_>>()?;

    let mut rendered = rendered.into_iter();
    let images = manifest
        .levels
        .iter()
        .map(|level| rendered.by_ref().take(level.views.len()).collect())
        .collect();
    Ok(ProviderOutput {
        levels: manifest.levels.iter().map(|l| l.level).collect(),
        images,
    })
}

fn image_seed(seed: u64, level: u32, view: usize) -> u64 {
    seed ^ (u64::from(level) << 40) ^ ((view as u64) << 20) ^ 0x9e37_79b9_7f4a_7c15
}

fn paint(depth: &image::ImageBuffer<image::Luma<u16>, Vec<u16>>, pattern: &Pattern, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = depth.dimensions();
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Draw noise for every pixel so the sequence is independent of coverage.
            let jitter: [i16; 3] = match pattern {
                Pattern::Noise { amplitude, .. } => {
                    let a = *amplitude as i16;
                    [rng.random_range(-a..=a), rng.random_range(-a..=a), rng.random_range(-a..=a)]
                }
                _ => [0; 3],
            };
            if depth.get_pixel(x, y)[0] == 0 {
                continue;
            }
            let color = match pattern {
                Pattern::Solid { color } => *color,
                Pattern::Checker { a, b, cell } => {
                    let cell = (*cell).max(1);
                    if (x / cell + y / cell) % 2 == 0 {
                        *a
                    } else {
                        *b
                    }
                }
                Pattern::Noise { base, .. } => {
                    std::array::from_fn(|c| (base[c] as i16 + jitter[c]).clamp(0, 255) as u8)
                }
            };
            img.put_pixel(x, y, Rgb(color));
        }
    }
    img
}

/// Loads `view_L{level}_V{view:02}.png` for every manifest entry. Reports
/// every missing file at once; a size mismatch names the offending file.
pub fn load_directory_textures(dir: &Path, manifest: &RenderManifest) -> Result<ProviderOutput> {
    let missing: Vec<String> = manifest
        .levels
        .iter()
        .flat_map(|l| (0..l.views.len()).map(move |v| view_image_name(l.level, v)))
        .filter(|name| !dir.join(name).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingViews(missing));
    }
    let mut images = Vec::with_capacity(manifest.levels.len());
    for level in &manifest.levels {
        let mut views = Vec::with_capacity(level.views.len());
        for v in 0..level.views.len() {
            let name = view_image_name(level.level, v);
            let path = dir.join(&name);
            let img = image::open(&path).map_err(|e| Error::image(&path, e))?.to_rgb8();
            if img.dimensions() != manifest.view_resolution {
                return Err(Error::DimensionMismatch {
                    file: name,
                    expected: manifest.view_resolution,
                    actual: img.dimensions(),
                });
            }
            views.push(img);
        }
        images.push(views);
    }
    Ok(ProviderOutput {
        levels: manifest.levels.iter().map(|l| l.level).collect(),
        images,
    })
}
