//! UV-space layers: per-texel view weights, unprojection of view images and
//! the masked softmax blend across layers.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use glam::{DVec2, DVec3};
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Bvh, RayHit};
use crate::camera::{CameraFrame, CameraRig, ViewCamera};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::visibility::{render_level_view, LevelSets, ViewBuffers, DEPTH_TIE_EPS, NO_FACE};

pub const DEFAULT_UV_RESOLUTION: u32 = 1024;

/// Texels outside every chart that still receive content, as rings around
/// the charts.
pub const DILATION_TEXELS: u32 = 2;

/// Which face owns each texel of the atlas and the 3D point it lifts to.
#[derive(Clone, Debug)]
pub struct TexelMap {
    pub res: u32,
    pub face: Vec<u32>,
    pub point: Vec<DVec3>,
    /// The texel centre lies inside its face's UV triangle (not a dilation texel).
    pub core: Vec<bool>,
}

impl TexelMap {
    pub fn len(&self) -> usize {
        self.face.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face.is_empty()
    }

    pub fn occupied(&self) -> usize {
        self.core.iter().filter(|&&c| c).count()
    }
}

/// Image-space position of a UV coordinate (row 0 at `v = 1`).
pub fn uv_to_texel_space(uv: DVec2, res: u32) -> DVec2 {
    DVec2::new(uv.x * res as f64, (1.0 - uv.y) * res as f64)
}

/// Rasterizes the mesh's UV triangles. A texel centre inside several
/// triangles goes to the lowest face index. Then `dilation` rings of empty
/// texels adopt a neighbour's face, lifted to the closest point of that
/// face's UV triangle.
pub fn build_texel_map(mesh: &Mesh, res: u32, dilation: u32) -> TexelMap {
    let uv = mesh.uv().expect("texel map needs UVs");
    let n = res as usize * res as usize;
    let mut map = TexelMap {
        res,
        face: vec![NO_FACE; n],
        point: vec![DVec3::ZERO; n],
        core: vec![false; n],
    };
    let tri_px: Vec<[DVec2; 3]> = uv.iter().map(|t| t.map(|p| uv_to_texel_space(p, res))).collect();

    for (f, px) in tri_px.iter().enumerate() {
        let area = (px[1] - px[0]).perp_dot(px[2] - px[0]);
        if area.abs() < 1e-18 {
            continue;
        }
        let lo = px[0].min(px[1]).min(px[2]);
        let hi = px[0].max(px[1]).max(px[2]);
        let x0 = (lo.x - 0.5).ceil().max(0.0) as usize;
        let y0 = (lo.y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((hi.x - 0.5).floor() as i64).min(res as i64 - 1);
        let y1 = ((hi.y - 0.5).floor() as i64).min(res as i64 - 1);
        let tri3 = mesh.triangle(f);
        for y in y0 as i64..=y1 {
            for x in x0 as i64..=x1 {
                let idx = y as usize * res as usize + x as usize;
                if map.face[idx] != NO_FACE {
                    continue;
                }
                let c = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let b = barycentric_2d(px, c);
                if b.min_element() >= 0.0 {
                    map.face[idx] = f as u32;
                    map.point[idx] = tri3[0] * b.x + tri3[1] * b.y + tri3[2] * b.z;
                    map.core[idx] = true;
                }
            }
        }
    }

    const RING: [(i64, i64); 8] = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)];
    for _ in 0..dilation {
        let snapshot = map.face.clone();
        for y in 0..res as i64 {
            for x in 0..res as i64 {
                let idx = (y * res as i64 + x) as usize;
                if snapshot[idx] != NO_FACE {
                    continue;
                }
                let neighbour = RING.iter().find_map(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= res as i64 || ny >= res as i64 {
                        return None;
                    }
                    let f = snapshot[(ny * res as i64 + nx) as usize];
                    (f != NO_FACE).then_some(f)
                });
                if let Some(f) = neighbour {
                    let px = &tri_px[f as usize];
                    let c = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let b = barycentric_2d(px, closest_point_in_triangle(px, c));
                    let b = b.max(DVec3::ZERO);
                    let b = b / (b.x + b.y + b.z);
                    let tri3 = mesh.triangle(f as usize);
                    map.face[idx] = f;
                    map.point[idx] = tri3[0] * b.x + tri3[1] * b.y + tri3[2] * b.z;
                }
            }
        }
    }
    map
}

fn barycentric_2d(t: &[DVec2; 3], p: DVec2) -> DVec3 {
    let area = (t[1] - t[0]).perp_dot(t[2] - t[0]);
    let b1 = (p - t[0]).perp_dot(t[2] - t[0]) / area;
    let b2 = (t[1] - t[0]).perp_dot(p - t[0]) / area;
    DVec3::new(1.0 - b1 - b2, b1, b2)
}

fn closest_point_in_triangle(t: &[DVec2; 3], p: DVec2) -> DVec2 {
    if barycentric_2d(t, p).min_element() >= 0.0 {
        return p;
    }
    (0..3)
        .map(|i| {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            let ab = b - a;
            let s = ((p - a).dot(ab) / ab.length_squared()).clamp(0.0, 1.0);
            a + ab * s
        })
        .min_by(|a, b| a.distance_squared(p).total_cmp(&b.distance_squared(p)))
        .unwrap()
}

/// Barycentric coordinates of `p` (assumed on the triangle's plane).
pub fn barycentric_3d(t: &[DVec3; 3], p: DVec3) -> DVec3 {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let r = p - t[0];
    let (d11, d12, d22) = (e1.dot(e1), e1.dot(e2), e2.dot(e2));
    let (r1, r2) = (r.dot(e1), r.dot(e2));
    let det = d11 * d22 - d12 * d12;
    let b1 = (d22 * r1 - d12 * r2) / det;
    let b2 = (d11 * r2 - d12 * r1) / det;
    DVec3::new(1.0 - b1 - b2, b1, b2)
}

/// Bilinear sample with clamp-to-edge; `pos` in pixel units with centres
/// at `+0.5`. Channels in `[0, 1]`.
pub fn sample_bilinear(img: &RgbImage, pos: DVec2) -> DVec3 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = pos.x - 0.5;
    let y = pos.y - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let texel = |xi: i64, yi: i64| {
        let p = img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32);
        DVec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = texel(x0, y0) * (1.0 - fx) + texel(x0 + 1, y0) * fx;
    let bottom = texel(x0, y0 + 1) * (1.0 - fx) + texel(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear sample over the taps for which `keep(x, y)` holds, with the
/// remaining weights renormalized. `None` when no tap with non-zero weight
/// is kept.
pub fn sample_bilinear_masked(img: &RgbImage, pos: DVec2, keep: impl Fn(u32, u32) -> bool) -> Option<DVec3> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = pos.x - 0.5;
    let y = pos.y - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut sum = DVec3::ZERO;
    let mut total = 0.0;
    for (dx, dy, wt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (xi, yi) = ((x0 + dx).clamp(0, w - 1) as u32, (y0 + dy).clamp(0, h - 1) as u32);
        if wt > 0.0 && keep(xi, yi) {
            let p = img.get_pixel(xi, yi);
            sum += DVec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0 * wt;
            total += wt;
        }
    }
    (total > 0.0).then(|| sum / total)
}

/// A view pixel may colour a texel only if it shows a surface at roughly
/// the texel's distance; this keeps background and occluders out of the
/// bilinear footprint at silhouettes. Relative to the camera distance.
pub const TAP_DEPTH_SLACK: f64 = 0.05;

/// Visibility of texel point `p` on `face` in one rendered view, and the
/// view weight `|n(f)·d|` along the ray through `p`.
///
/// When the pixel `p` projects into shows `face`, the texel is seen. When it
/// shows another face (thin or grazing triangles, where pixel centres land
/// on neighbours), the question is settled exactly: `face` must be front
/// facing and the segment from `p` to the camera must cross no face that
/// the level render would draw. Hits within [`DEPTH_TIE_EPS`] of `p` count
/// as coincident and lose to the texel's own face.
#[allow(clippy::too_many_arguments)]
pub fn texel_view_weight(
    mesh: &Mesh,
    bvh: &Bvh,
    flipped: &dyn Fn(usize) -> bool,
    face: u32,
    p: DVec3,
    view: &ViewCamera,
    frame: &CameraFrame,
    buffers: &ViewBuffers,
    hits: &mut Vec<RayHit>,
) -> Option<(f64, DVec2)> {
    let (pix, _) = frame.project(p)?;
    if pix.x < 0.0 || pix.y < 0.0 || pix.x >= view.width() as f64 || pix.y >= view.height() as f64 {
        return None;
    }
    let to_p = p - frame.origin;
    let dist = to_p.length();
    let d = to_p / dist;
    let facing = |f: u32| if flipped(f as usize) { -mesh.normal(f as usize) } else { mesh.normal(f as usize) };
    if facing(face).dot(d) >= 0.0 {
        return None;
    }
    let shown = buffers.face_at(pix.x as u32, pix.y as u32);
    if shown != Some(face) {
        hits.clear();
        bvh.all_hits(p, -d, DEPTH_TIE_EPS, hits);
        let blocked = hits
            .iter()
            .any(|h| h.face != face && h.t < dist && facing(h.face).dot(d) < 0.0);
        if blocked {
            return None;
        }
    }
    Some((mesh.normal(face as usize).dot(d).abs(), pix))
}

/// One texture layer `UV_k` with its weight map `W_k`; the mask `M_k` is
/// `W_k > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct UvLayer {
    pub res: u32,
    pub weight: Vec<f32>,
    pub color: Vec<[f32; 3]>,
}

impl UvLayer {
    pub fn mask(&self, texel: usize) -> bool {
        self.weight[texel] > 0.0
    }

    pub fn masked_count(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn to_image(&self, background: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(self.res, self.res, |x, y| {
            let i = (y * self.res + x) as usize;
            if self.mask(i) {
                Rgb(quantize(self.color[i]))
            } else {
                Rgb(background)
            }
        })
    }

    /// Raw little-endian dump: magic, resolution, then per texel
    /// `weight, r, g, b` as `f32`.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.weight.len() * 16);
        buf.extend_from_slice(b"LTXL");
        buf.extend_from_slice(&self.res.to_le_bytes());
        for (w, c) in self.weight.iter().zip(&self.color) {
            for v in [*w, c[0], c[1], c[2]] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<UvLayer> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, "malformed layer file"));
        if bytes.len() < 8 || &bytes[..4] != b"LTXL" {
            return Err(bad());
        }
        let res = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = res as usize * res as usize;
        if bytes.len() != 8 + n * 16 {
            return Err(bad());
        }
        let floats: Vec<f32> = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(UvLayer {
            res,
            weight: floats.chunks_exact(4).map(|c| c[0]).collect(),
            color: floats.chunks_exact(4).map(|c| [c[1], c[2], c[3]]).collect(),
        })
    }

    /// Debug weight map as binary PGM, scaled so `max_weight` is white.
    pub fn write_weight_pgm(&self, max_weight: f64, path: &Path) -> Result<()> {
        let mut buf = format!("P5\n{} {}\n255\n", self.res, self.res).into_bytes();
        buf.extend(
            self.weight
                .iter()
                .map(|&w| ((w as f64 / max_weight).clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

pub fn quantize(c: [f32; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Accumulates weights and colours for one layer, one view at a time in rig
/// order.
pub struct LayerAccumulator<'a> {
    mesh: &'a Mesh,
    bvh: &'a Bvh,
    sets: &'a LevelSets,
    layer: usize,
    texels: &'a TexelMap,
    charts: Option<&'a [u32]>,
    weight: Vec<f64>,
    color: Vec<DVec3>,
}

impl<'a> LayerAccumulator<'a> {
    pub fn new(mesh: &'a Mesh, bvh: &'a Bvh, sets: &'a LevelSets, layer: usize, texels: &'a TexelMap) -> Self {
        LayerAccumulator {
            mesh,
            bvh,
            sets,
            layer,
            texels,
            charts: None,
            weight: vec![0.0; texels.len()],
            color: vec![DVec3::ZERO; texels.len()],
        }
    }

    /// Per-face chart ids. With them, a texel only samples view pixels that
    /// show its own chart: across a UV seam the neighbouring pixels belong to
    /// a different texture island.
    pub fn with_charts(mut self, charts: &'a [u32]) -> Self {
        self.charts = Some(charts);
        self
    }

    /// Adds one view. Only texels of faces in `F_k^res` take part; with an
    /// image, colours are bilinearly sampled at the projected position.
    pub fn add_view(&mut self, view: &ViewCamera, buffers: &ViewBuffers, image: Option<&RgbImage>) {
        let frame = view.frame();
        let (mesh, bvh, sets, layer, texels, charts) =
            (self.mesh, self.bvh, self.sets, self.layer, self.texels, self.charts);
        let flipped = |f: usize| sets.is_flipped(layer, f);
        self.weight
            .par_iter_mut()
            .zip(self.color.par_iter_mut())
            .enumerate()
            .for_each_init(Vec::new, |hits, (t, (w, c))| {
                let face = texels.face[t];
                if face == NO_FACE || !sets.in_residual(layer, face as usize) {
                    return;
                }
                let p = texels.point[t];
                if let Some((wv, pix)) = texel_view_weight(mesh, bvh, &flipped, face, p, view, &frame, buffers, hits) {
                    *w += wv;
                    if let Some(img) = image {
                        let dist = (p - frame.origin).length();
                        let surface = |x: u32, y: u32| {
                            let i = (y * buffers.width + x) as usize;
                            buffers.face_id[i] != NO_FACE && (buffers.depth[i] - dist).abs() <= TAP_DEPTH_SLACK * dist
                        };
                        let same_chart = |x: u32, y: u32| {
                            let g = buffers.face_id[(y * buffers.width + x) as usize];
                            surface(x, y) && charts.is_none_or(|c| c[g as usize] == c[face as usize])
                        };
                        // Narrowest footprint first; at worst plain bilinear.
                        let colour = sample_bilinear_masked(img, pix, same_chart)
                            .or_else(|| sample_bilinear_masked(img, pix, surface))
                            .unwrap_or_else(|| sample_bilinear(img, pix));
                        *c += colour * wv;
                    }
                }
            });
    }

    pub fn finish(self) -> UvLayer {
        let color = self
            .weight
            .iter()
            .zip(&self.color)
            .map(|(&w, &c)| {
                if w > 0.0 {
                    let c = c / w;
                    [c.x as f32, c.y as f32, c.z as f32]
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        UvLayer {
            res: self.texels.res,
            weight: self.weight.iter().map(|&w| w as f32).collect(),
            color,
        }
    }
}

/// `W_k` and `M_k` for layer `k` from pre-rendered per-view buffers.
pub fn rasterize_level_weights(
    mesh: &Mesh,
    sets: &LevelSets,
    layer: usize,
    rig: &CameraRig,
    buffers: &[ViewBuffers],
    texels: &TexelMap,
) -> (Vec<f32>, Vec<bool>) {
    let bvh = Bvh::build(mesh);
    let mut acc = LayerAccumulator::new(mesh, &bvh, sets, layer, texels);
    for (view, buf) in rig.views.iter().zip(buffers) {
        acc.add_view(view, buf, None);
    }
    let layer = acc.finish();
    let mask = layer.weight.iter().map(|&w| w > 0.0).collect();
    (layer.weight, mask)
}

/// `UV_k`: per-texel weighted average of the view images, with the same
/// weights and visibility as [`rasterize_level_weights`].
#[allow(clippy::too_many_arguments)]
pub fn unproject_views_to_uv(
    mesh: &Mesh,
    sets: &LevelSets,
    layer: usize,
    rig: &CameraRig,
    buffers: &[ViewBuffers],
    images: &[RgbImage],
    texels: &TexelMap,
    charts: Option<&[u32]>,
) -> Result<UvLayer> {
    if images.len() != rig.len() || buffers.len() != rig.len() {
        return Err(Error::Validation(format!(
            "{} images / {} buffers for {} views",
            images.len(),
            buffers.len(),
            rig.len()
        )));
    }
    let bvh = Bvh::build(mesh);
    let mut acc = LayerAccumulator::new(mesh, &bvh, sets, layer, texels);
    if let Some(c) = charts {
        acc = acc.with_charts(c);
    }
    for (i, ((view, buf), img)) in rig.views.iter().zip(buffers).zip(images).enumerate() {
        if img.dimensions() != view.resolution {
            return Err(Error::DimensionMismatch {
                file: format!("view {i}"),
                expected: view.resolution,
                actual: img.dimensions(),
            });
        }
        acc.add_view(view, buf, Some(img));
    }
    Ok(acc.finish())
}

/// Renders and unprojects layer `k` view by view without keeping every
/// view's buffers alive.
#[allow(clippy::too_many_arguments)]
pub fn build_layer(
    mesh: &Mesh,
    bvh: &Bvh,
    sets: &LevelSets,
    layer: usize,
    rig: &CameraRig,
    images: &[RgbImage],
    texels: &TexelMap,
    charts: Option<&[u32]>,
) -> Result<UvLayer> {
    let mut acc = LayerAccumulator::new(mesh, bvh, sets, layer, texels);
    if let Some(c) = charts {
        acc = acc.with_charts(c);
    }
    for (i, (view, img)) in rig.views.iter().zip(images).enumerate() {
        if img.dimensions() != view.resolution {
            return Err(Error::DimensionMismatch {
                file: format!("view {i}"),
                expected: view.resolution,
                actual: img.dimensions(),
            });
        }
        let buf = render_level_view(mesh, sets, layer, view);
        acc.add_view(view, &buf, Some(img));
    }
    Ok(acc.finish())
}

/// Final texture `UV_F` plus the normalized layer weights `W̄_k`.
#[derive(Clone, Debug)]
pub struct BlendedTexture {
    pub res: u32,
    pub color: Vec<[f32; 3]>,
    /// `W̄_k` per layer, per texel.
    pub weights: Vec<Vec<f64>>,
    /// Texels where at least one mask is set.
    pub masked: Vec<bool>,
}

impl BlendedTexture {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn to_image(&self, background: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(self.res, self.res, |x, y| {
            let i = (y * self.res + x) as usize;
            if self.masked[i] {
                Rgb(quantize(self.color[i]))
            } else {
                Rgb(background)
            }
        })
    }
}

/// Normalized layer weights at one texel:
/// `W̄_k = M_k e^{W_k/τ} / Σ_j M_j e^{W_j/τ}`, evaluated with the masked
/// maximum subtracted. `None` when no mask is set.
pub fn softmax_weights(weights: &[f64], masks: &[bool], tau: f64) -> Option<Vec<f64>> {
    let peak = weights
        .iter()
        .zip(masks)
        .filter(|(_, &m)| m)
        .map(|(&w, _)| w / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return None;
    }
    let exps: Vec<f64> = weights
        .iter()
        .zip(masks)
        .map(|(&w, &m)| if m { (w / tau - peak).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    Some(exps.into_iter().map(|e| e / total).collect())
}

/// Blends all layers into `UV_F = Σ_k W̄_k ⊙ UV_k`.
pub fn blend_levels(layers: &[UvLayer], tau: f64) -> Result<BlendedTexture> {
    if !(tau > 0.0) {
        return Err(Error::Validation(format!("temperature must be positive, got {tau}")));
    }
    let res = layers
        .first()
        .map(|l| l.res)
        .ok_or_else(|| Error::Validation("no layers to blend".into()))?;
    if layers.iter().any(|l| l.res != res) {
        return Err(Error::Validation("layers differ in resolution".into()));
    }
    let n = res as usize * res as usize;
    let per_texel: Vec<(Option<Vec<f64>>, [f32; 3])> = (0..n)
        .into_par_iter()
        .map(|t| {
            let w: Vec<f64> = layers.iter().map(|l| l.weight[t] as f64).collect();
            let m: Vec<bool> = layers.iter().map(|l| l.mask(t)).collect();
            match softmax_weights(&w, &m, tau) {
                Some(norm) => {
                    let single = m.iter().filter(|&&x| x).count() == 1;
                    let color = if single {
                        layers[m.iter().position(|&x| x).unwrap()].color[t]
                    } else {
                        let mut c = [0.0f64; 3];
                        for (l, &wk) in layers.iter().zip(&norm) {
                            for ch in 0..3 {
                                c[ch] += wk * l.color[t][ch] as f64;
                            }
                        }
                        c.map(|v| v as f32)
                    };
                    (Some(norm), color)
                }
                None => (None, [0.0; 3]),
            }
        })
        .collect();

    let mut weights = vec![vec![0.0; n]; layers.len()];
    let mut color = Vec::with_capacity(n);
    let mut masked = Vec::with_capacity(n);
    for (t, (norm, c)) in per_texel.into_iter().enumerate() {
        masked.push(norm.is_some());
        if let Some(norm) = norm {
            for (k, v) in norm.into_iter().enumerate() {
                weights[k][t] = v;
            }
        }
        color.push(c);
    }
    let out = BlendedTexture {
        res,
        color,
        weights,
        masked,
    };
    if out.masked_count() == 0 {
        return Err(Error::NoCoverage { occupied: n });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Texels inside some chart.
    pub occupied: usize,
    /// Occupied texels with at least one layer mask set.
    pub covered: usize,
    pub fraction: f64,
}

pub fn coverage(blended: &BlendedTexture, texels: &TexelMap) -> Coverage {
    let occupied = texels.occupied();
    let covered = texels
        .core
        .iter()
        .zip(&blended.masked)
        .filter(|(&c, &m)| c && m)
        .count();
    Coverage {
        occupied,
        covered,
        fraction: if occupied == 0 { 0.0 } else { covered as f64 / occupied as f64 },
    }
}

/// Renders a UV texture into a view using the view's buffers: each covered
/// pixel looks up the UV of its surface point and samples `texture`.
pub fn render_texture_to_view(mesh: &Mesh, view: &ViewCamera, buffers: &ViewBuffers, texture: &RgbImage) -> RgbImage {
    let uv = mesh.uv().expect("rendering a texture needs UVs");
    let frame = view.frame();
    let res = texture.width();
    RgbImage::from_fn(buffers.width, buffers.height, |x, y| {
        let Some(f) = buffers.face_at(x, y) else {
            return Rgb([0, 0, 0]);
        };
        let d = frame.pixel_ray(x, y);
        let p = frame.origin + d * buffers.depth[(y * buffers.width + x) as usize];
        let b = barycentric_3d(&mesh.triangle(f as usize), p);
        let t = uv[f as usize];
        let at = t[0] * b.x + t[1] * b.y + t[2] * b.z;
        let c = sample_bilinear(texture, uv_to_texel_space(at, res));
        Rgb(quantize([c.x as f32, c.y as f32, c.z as f32]))
    })
}
