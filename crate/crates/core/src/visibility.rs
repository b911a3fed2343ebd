//! Per-level face sets and flip/cull rasterization.
//!
//! At layer `k` every face is drawn. Faces already textured at an earlier
//! layer are drawn with a negated normal, and a fragment is discarded when
//! its effective normal points within 90° of the pixel's viewing ray. Near
//! shells that were textured earlier therefore vanish while their far sides
//! turn towards the camera, exposing the untextured interior without
//! changing the object's outline.

use std::path::Path;

use glam::{DVec2, DVec3};
use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraFrame, ViewCamera};
use crate::error::{Error, Result};
use crate::hitlevel::HitLevelAssignment;
use crate::mesh::Mesh;

/// Fragments within this distance of each other are a depth tie; the
/// unflipped face wins a tie.
pub const DEPTH_TIE_EPS: f64 = 1e-5;

pub const NO_FACE: u32 = u32::MAX;

const STRIP_ROWS: usize = 16;

/// Layered decomposition of the face set. Layers are numbered from 1 and
/// correspond, in order, to the distinct hit levels that were assigned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "LevelSetsFile", try_from = "LevelSetsFile")]
pub struct LevelSets {
    hit_levels: Vec<u32>,
    face_layer: Vec<u32>,
    init: Vec<Vec<u32>>,
    residual: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct LevelSetsFile {
    hit_levels: Vec<u32>,
    face_layer: Vec<u32>,
}

impl From<LevelSets> for LevelSetsFile {
    fn from(s: LevelSets) -> Self {
        LevelSetsFile {
            hit_levels: s.hit_levels,
            face_layer: s.face_layer,
        }
    }
}

impl TryFrom<LevelSetsFile> for LevelSets {
    type Error = String;

    fn try_from(file: LevelSetsFile) -> Result<Self, String> {
        let layers = file.hit_levels.len() as u32;
        if file.face_layer.iter().any(|&l| l == 0 || l > layers) {
            return Err(format!("face layer outside 1..={layers}"));
        }
        Ok(LevelSets::from_face_layers(file.hit_levels, file.face_layer))
    }
}

impl LevelSets {
    fn from_face_layers(hit_levels: Vec<u32>, face_layer: Vec<u32>) -> LevelSets {
        let layers = hit_levels.len();
        let mut init = vec![Vec::new(); layers];
        for (f, &l) in face_layer.iter().enumerate() {
            init[l as usize - 1].push(f as u32);
        }
        let mut residual = Vec::with_capacity(layers);
        let mut remaining: Vec<u32> = (0..face_layer.len() as u32).collect();
        for k in 1..=layers as u32 {
            residual.push(remaining.clone());
            remaining.retain(|&f| face_layer[f as usize] != k);
        }
        LevelSets {
            hit_levels,
            face_layer,
            init,
            residual,
        }
    }

    /// Number of layers `H`.
    pub fn layer_count(&self) -> usize {
        self.hit_levels.len()
    }

    /// Hit level that layer `k` was built from.
    pub fn hit_level(&self, layer: usize) -> u32 {
        self.hit_levels[layer - 1]
    }

    pub fn face_count(&self) -> usize {
        self.face_layer.len()
    }

    /// Layer in which each face gets textured.
    pub fn face_layer(&self, face: usize) -> usize {
        self.face_layer[face] as usize
    }

    /// `F_k^init`, ascending.
    pub fn init(&self, layer: usize) -> &[u32] {
        &self.init[layer - 1]
    }

    /// `F_k^res`, ascending.
    pub fn residual(&self, layer: usize) -> &[u32] {
        &self.residual[layer - 1]
    }

    pub fn in_residual(&self, layer: usize, face: usize) -> bool {
        self.face_layer[face] as usize >= layer
    }

    /// A face is flipped at layer `k` exactly when it is not in `F_k^res`.
    pub fn is_flipped(&self, layer: usize, face: usize) -> bool {
        !self.in_residual(layer, face)
    }

    pub fn flip_mask(&self, layer: usize) -> Vec<bool> {
        (0..self.face_count()).map(|f| self.is_flipped(layer, f)).collect()
    }
}

/// Builds `F_k^init`, `F_k^res` and flip flags from a hit-level assignment.
/// Hit levels that no superface received are skipped, so every layer has a
/// non-empty `F_k^init` and the residual sets strictly shrink.
pub fn build_level_sets(assignment: &HitLevelAssignment) -> LevelSets {
    let mut levels: Vec<u32> = assignment.face_level.clone();
    levels.sort_unstable();
    levels.dedup();
    let face_layer = assignment
        .face_level
        .iter()
        .map(|l| levels.binary_search(l).unwrap() as u32 + 1)
        .collect();
    LevelSets::from_face_layers(levels, face_layer)
}

/// Per-pixel rasterization output for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBuffers {
    pub width: u32,
    pub height: u32,
    /// Euclidean distance from the camera along the pixel ray; `+∞` on a miss.
    pub depth: Vec<f64>,
    /// Visible face, or [`NO_FACE`].
    pub face_id: Vec<u32>,
    /// `|n(f)·d|` of the visible face; 0 on a miss.
    pub cosine: Vec<f64>,
}

impl ViewBuffers {
    fn empty(width: u32, height: u32) -> ViewBuffers {
        let n = width as usize * height as usize;
        ViewBuffers {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            face_id: vec![NO_FACE; n],
            cosine: vec![0.0; n],
        }
    }

    pub fn face_at(&self, x: u32, y: u32) -> Option<u32> {
        let f = self.face_id[(y * self.width + x) as usize];
        (f != NO_FACE).then_some(f)
    }

    /// Pixels showing any face.
    pub fn silhouette(&self) -> Vec<bool> {
        self.face_id.iter().map(|&f| f != NO_FACE).collect()
    }

    pub fn covered_pixels(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != NO_FACE).count()
    }

    /// Pixels showing a face for which `keep` holds.
    pub fn count_faces(&self, keep: impl Fn(u32) -> bool) -> usize {
        self.face_id
            .iter()
            .filter(|&&f| f != NO_FACE && keep(f))
            .count()
    }
}

/// Renders layer `layer` of `sets` from `view`: all faces, with faces outside
/// `F_k^res` flipped, per-pixel backface culling and a depth test.
pub fn render_level_view(mesh: &Mesh, sets: &LevelSets, layer: usize, view: &ViewCamera) -> ViewBuffers {
    let flips = sets.flip_mask(layer);
    render_faces(mesh, view, |_| true, |f| flips[f])
}

/// General rasterizer: draws the faces selected by `include`, negating the
/// normals of those selected by `flipped`.
pub fn render_faces(
    mesh: &Mesh,
    view: &ViewCamera,
    include: impl Fn(usize) -> bool + Sync,
    flipped: impl Fn(usize) -> bool + Sync,
) -> ViewBuffers {
    let frame = view.frame();
    let (w, h) = view.resolution;
    let mut out = ViewBuffers::empty(w, h);
    let strips = (h as usize).div_ceil(STRIP_ROWS);

    let prepared: Vec<ScreenTriangle> = (0..mesh.face_count())
        .filter(|&f| include(f))
        .filter_map(|f| ScreenTriangle::new(mesh, f, flipped(f), &frame, w, h))
        .collect();
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); strips];
    for (i, tri) in prepared.iter().enumerate() {
        for bin in &mut bins[tri.y0 / STRIP_ROWS..=tri.y1 / STRIP_ROWS] {
            bin.push(i as u32);
        }
    }

    let chunk = STRIP_ROWS * w as usize;
    out.depth
        .par_chunks_mut(chunk)
        .zip(out.face_id.par_chunks_mut(chunk))
        .zip(out.cosine.par_chunks_mut(chunk))
        .zip(bins.par_iter())
        .enumerate()
        .for_each(|(strip, (((depth, face_id), cosine), bin))| {
            let row0 = strip * STRIP_ROWS;
            let rows = depth.len() / w as usize;
            let mut flip_at = vec![false; depth.len()];
            for &i in bin {
                let tri = &prepared[i as usize];
                let y_lo = tri.y0.max(row0);
                let y_hi = tri.y1.min(row0 + rows - 1);
                for y in y_lo..=y_hi {
                    for x in tri.x0..=tri.x1 {
                        let p = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                        if !tri.covers(p) {
                            continue;
                        }
                        let d = frame.pixel_ray(x as u32, y as u32);
                        let facing = tri.normal.dot(d);
                        if facing >= 0.0 {
                            continue;
                        }
                        let t = tri.plane / facing;
                        let idx = (y - row0) * w as usize + x;
                        let cur = face_id[idx];
                        let wins = cur == NO_FACE || {
                            let cur_depth = depth[idx];
                            if (t - cur_depth).abs() <= DEPTH_TIE_EPS && tri.flipped != flip_at[idx] {
                                !tri.flipped
                            } else {
                                t < cur_depth
                            }
                        };
                        if wins {
                            depth[idx] = t;
                            face_id[idx] = tri.face;
                            cosine[idx] = -facing;
                            flip_at[idx] = tri.flipped;
                        }
                    }
                }
            }
        });
    out
}

/// A face projected to the image, with its effective normal and the plane
/// offset `n'·(v0 - eye)` used to recover ray depth.
struct ScreenTriangle {
    face: u32,
    flipped: bool,
    normal: DVec3,
    plane: f64,
    /// Screen vertices ordered so the signed area is positive.
    s: [DVec2; 3],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl ScreenTriangle {
    fn new(mesh: &Mesh, face: usize, flipped: bool, frame: &CameraFrame, w: u32, h: u32) -> Option<ScreenTriangle> {
        let tri = mesh.triangle(face);
        let mut s = [DVec2::ZERO; 3];
        for (dst, p) in s.iter_mut().zip(tri) {
            *dst = frame.project(p)?.0;
        }
        let area = (s[1] - s[0]).perp_dot(s[2] - s[0]);
        if area == 0.0 {
            return None;
        }
        if area < 0.0 {
            s.swap(1, 2);
        }
        let lo = s[0].min(s[1]).min(s[2]);
        let hi = s[0].max(s[1]).max(s[2]);
        // Pixel centres at +0.5: the covered range is [ceil(lo - 0.5), floor(hi - 0.5)].
        let x0 = (lo.x - 0.5).ceil().max(0.0);
        let y0 = (lo.y - 0.5).ceil().max(0.0);
        let x1 = (hi.x - 0.5).floor().min(w as f64 - 1.0);
        let y1 = (hi.y - 0.5).floor().min(h as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            return None;
        }
        let normal = if flipped { -mesh.normal(face) } else { mesh.normal(face) };
        Some(ScreenTriangle {
            face: face as u32,
            flipped,
            normal,
            plane: normal.dot(tri[0] - frame.origin),
            s,
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        })
    }

    /// Edge-function coverage with a tie rule: a centre exactly on an edge is
    /// owned by exactly one of the two (consistently oriented) triangles
    /// sharing that edge.
    fn covers(&self, p: DVec2) -> bool {
        for i in 0..3 {
            let a = self.s[i];
            let b = self.s[(i + 1) % 3];
            // Evaluate from the lexicographically smaller endpoint so the two
            // triangles sharing an edge get exactly negated values.
            let e = if (a.x, a.y) <= (b.x, b.y) {
                (b - a).perp_dot(p - a)
            } else {
                -(a - b).perp_dot(p - b)
            };
            if e < 0.0 {
                return false;
            }
            if e == 0.0 {
                let d = b - a;
                let owns = d.y > 0.0 || (d.y == 0.0 && d.x < 0.0);
                if !owns {
                    return false;
                }
            }
        }
        true
    }
}

/// Encodes ray depth as 16-bit grayscale: 0 is background, nearer is
/// brighter, `near` maps to 65535 and `far` to 1.
pub fn encode_depth(buffers: &ViewBuffers, near: f64, far: f64) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let span = far - near;
    ImageBuffer::from_fn(buffers.width, buffers.height, |x, y| {
        let d = buffers.depth[(y * buffers.width + x) as usize];
        if d.is_finite() {
            let t = ((d - near) / span).clamp(0.0, 1.0);
            Luma([65535 - (t * 65534.0).round() as u16])
        } else {
            Luma([0])
        }
    })
}

/// Inverse of [`encode_depth`]; background decodes to `+∞`.
pub fn decode_depth(value: u16, near: f64, far: f64) -> f64 {
    if value == 0 {
        f64::INFINITY
    } else {
        near + (65535 - value) as f64 / 65534.0 * (far - near)
    }
}

pub fn write_depth_png(buffers: &ViewBuffers, near: f64, far: f64, path: &Path) -> Result<()> {
    encode_depth(buffers, near, far)
        .save(path)
        .map_err(|e| Error::image(path, e))
}

pub fn read_depth_png(path: &Path) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    if !path.exists() {
        return Err(Error::MissingDepth(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(img.into_luma16())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::build_camera_rig;
    use crate::fixtures;

    fn assignment(face_level: Vec<u32>) -> HitLevelAssignment {
        HitLevelAssignment {
            h_max: 4,
            superface_level: face_level.clone(),
            face_level,
            histograms: Vec::new(),
            face_superface_disagreements: 0,
        }
    }

    /// Set-algebra oracle: `F_1^res = F`, `F_k^res = F_{k-1}^res \ F_{k-1}^init`,
    /// flips are the complement of the residual set.
    fn check_algebra(sets: &LevelSets) {
        let n = sets.face_count();
        let mut seen = vec![0; n];
        for k in 1..=sets.layer_count() {
            assert!(!sets.init(k).is_empty());
            for &f in sets.init(k) {
                seen[f as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "init sets must partition F");
        let mut expected: Vec<u32> = (0..n as u32).collect();
        for k in 1..=sets.layer_count() {
            assert_eq!(sets.residual(k), expected.as_slice());
            for f in 0..n {
                assert_eq!(sets.is_flipped(k, f), !expected.contains(&(f as u32)));
            }
            let before = expected.len();
            expected.retain(|f| !sets.init(k).contains(f));
            assert!(expected.len() < before);
        }
        assert!(expected.is_empty());
    }

    #[test]
    fn single_level() {
        let sets = build_level_sets(&assignment(vec![1; 5]));
        assert_eq!(sets.layer_count(), 1);
        assert_eq!(sets.residual(1), &[0, 1, 2, 3, 4]);
        assert!(sets.flip_mask(1).iter().all(|&f| !f));
        check_algebra(&sets);
    }

    #[test]
    fn three_shells_and_gaps() {
        let sets = build_level_sets(&assignment(vec![1, 1, 2, 2, 3, 3]));
        assert_eq!(sets.residual(3), &[4, 5]);
        assert_eq!(sets.flip_mask(3), vec![true, true, true, true, false, false]);
        check_algebra(&sets);

        // Hit levels 1 and 4 only: two layers.
        let sets = build_level_sets(&assignment(vec![4, 1, 4]));
        assert_eq!(sets.layer_count(), 2);
        assert_eq!(sets.hit_level(2), 4);
        assert_eq!(sets.init(2), &[0, 2]);
        check_algebra(&sets);
    }

    #[test]
    fn serde_round_trip() {
        let sets = build_level_sets(&assignment(vec![2, 1, 3, 2]));
        let json = serde_json::to_string(&sets).unwrap();
        assert_eq!(serde_json::from_str::<LevelSets>(&json).unwrap(), sets);
        assert!(serde_json::from_str::<LevelSets>(r#"{"hit_levels":[1],"face_layer":[2]}"#).is_err());
    }

    fn single_layer(n: usize) -> LevelSets {
        build_level_sets(&assignment(vec![1; n]))
    }

    #[test]
    fn cube_front_view_shows_front_side_only() {
        let cube = fixtures::cube();
        let rig = build_camera_rig(3.0, 40.0, 64).unwrap();
        let buf = render_level_view(&cube, &single_layer(12), 1, &rig.views[0]);
        let mut faces: Vec<u32> = buf.face_id.iter().copied().filter(|&f| f != NO_FACE).collect();
        faces.sort_unstable();
        faces.dedup();
        assert_eq!(faces.len(), 2);
        for f in faces {
            assert_eq!(cube.normal(f as usize), DVec3::X);
        }
        for i in 0..buf.depth.len() {
            if buf.face_id[i] != NO_FACE {
                assert!(buf.depth[i].is_finite());
                assert!(buf.cosine[i] > 0.0 && buf.cosine[i] <= 1.0);
                // The +X side is at x = 0.5, camera at x = 3.
                assert!(buf.depth[i] >= 2.5 - 1e-12);
            } else {
                assert!(buf.depth[i].is_infinite());
            }
        }
    }

    #[test]
    fn watertight_coverage_no_double_draw() {
        // A finely split square: every covered pixel belongs to exactly one
        // triangle, so the coverage count equals the sum over faces rendered
        // one at a time.
        let plate = fixtures::box_mesh(DVec3::new(-0.4, -0.4, -0.4), DVec3::new(0.4, 0.4, 0.4), 5);
        let view = &build_camera_rig(2.5, 40.0, 73).unwrap().views[9];
        let all = render_faces(&plate, view, |_| true, |_| false);
        let separate: usize = (0..plate.face_count())
            .map(|f| render_faces(&plate, view, |g| g == f, |_| false).covered_pixels())
            .sum();
        assert_eq!(all.covered_pixels(), separate);
    }

    #[test]
    fn depth_matches_ray_cast() {
        let mesh = fixtures::nested_spheres(2);
        let view = &build_camera_rig(2.0, 45.0, 48).unwrap().views[11];
        let buf = render_faces(&mesh, view, |_| true, |_| false);
        let bvh = crate::bvh::Bvh::build(&mesh);
        let frame = view.frame();
        let mut hits = Vec::new();
        let mut coverage_mismatch = 0;
        for y in 0..48 {
            for x in 0..48 {
                let d = frame.pixel_ray(x, y);
                hits.clear();
                bvh.all_hits(frame.origin, d, 0.0, &mut hits);
                let front = hits
                    .iter()
                    .filter(|h| mesh.normal(h.face as usize).dot(d) < 0.0)
                    .map(|h| h.t)
                    .fold(f64::INFINITY, f64::min);
                let got = buf.depth[(y * 48 + x) as usize];
                if front.is_finite() && got.is_finite() {
                    assert!((front - got).abs() < 1e-9);
                } else if front.is_finite() != got.is_finite() {
                    coverage_mismatch += 1;
                }
            }
        }
        // Only pixel centres grazing the silhouette may disagree.
        assert!(coverage_mismatch <= 2, "{coverage_mismatch} pixels disagree");
    }

    #[test]
    fn flipped_coincident_face_loses_tie() {
        let q = fixtures::quad();
        // Face 0/1 are the flipped copy (already textured), 2/3 the original.
        let shell = q.flipped().merged(&q);
        let view = &build_camera_rig(2.0, 40.0, 32).unwrap().views[0];
        // Render with the back copy flipped so both face the camera.
        let buf = render_faces(&shell, view, |_| true, |f| f < 2);
        assert!(buf.covered_pixels() > 0);
        assert!(buf.face_id.iter().all(|&f| f == NO_FACE || f >= 2));
    }

    #[test]
    fn depth_png_round_trip() {
        let mesh = fixtures::icosphere(2, 0.5, DVec3::ZERO);
        let view = &build_camera_rig(1.8, 45.0, 40).unwrap().views[3];
        let buf = render_faces(&mesh, view, |_| true, |_| false);
        let img = encode_depth(&buf, view.near, view.far);
        let step = (view.far - view.near) / 65534.0;
        for (i, p) in img.pixels().enumerate() {
            let d = decode_depth(p[0], view.near, view.far);
            assert_eq!(d.is_finite(), buf.depth[i].is_finite());
            if d.is_finite() {
                assert!((d - buf.depth[i]).abs() <= step);
            }
        }
    }

    #[test]
    fn sealed_box_hides_its_contents_from_every_view() {
        // Axis-aligned views put pixel centres exactly on the sides' diagonals.
        let outer = fixtures::box_mesh(DVec3::splat(-0.5), DVec3::splat(0.5), 1);
        let inner = fixtures::box_mesh(DVec3::splat(-0.1), DVec3::splat(0.1), 1);
        let mesh = outer.merged(&inner);
        let n = mesh.face_count();
        let sets = build_level_sets(&assignment(vec![1; n]));
        for res in [95, 96, 128] {
            let rig = build_camera_rig(2.5, 40.0, res).unwrap();
            for view in &rig.views {
                let b = render_level_view(&mesh, &sets, 1, view);
                assert_eq!(b.count_faces(|f| f >= 12), 0);
            }
        }
    }
}
