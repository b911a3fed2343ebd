//! Multi-view ray casting and hit-level assignment.
//!
//! Every pixel of every rig view shoots one ray. Along a ray the surface
//! crossings are numbered `k = 1, 2, …` by distance, and the crossing with
//! face `f` at order `k` adds `max(-n(f)·d, 0)` to `W(f, k)`. Back-facing
//! crossings add nothing but still take their order slot. A superface's hit
//! level is the order with the largest summed weight over its faces.

use glam::DVec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Bvh, RayHit};
use crate::camera::CameraRig;
use crate::mesh::Mesh;
use crate::superface::SuperfaceSet;

pub const DEFAULT_H_MAX: u32 = 4;
pub const DEFAULT_RAY_RESOLUTION: u32 = 1536;

/// Crossings closer than this along a ray are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-6;

/// Sparse accumulated weights `W(f, k)`, `k ≥ 1`. Zero entries are never
/// reported or serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "WeightTableFile", try_from = "WeightTableFile")]
pub struct WeightTable {
    rows: Vec<Vec<f64>>,
    max_order: u32,
}

#[derive(Serialize, Deserialize)]
struct WeightTableFile {
    faces: usize,
    max_order: u32,
    /// `[face, k, weight]` triples, ordered by face then `k`.
    entries: Vec<(u32, u32, f64)>,
}

impl From<WeightTable> for WeightTableFile {
    fn from(t: WeightTable) -> Self {
        WeightTableFile {
            faces: t.rows.len(),
            max_order: t.max_order,
            entries: t.entries().collect(),
        }
    }
}

impl TryFrom<WeightTableFile> for WeightTable {
    type Error = String;

    fn try_from(file: WeightTableFile) -> Result<Self, String> {
        let mut table = WeightTable::new(file.faces);
        for (f, k, w) in file.entries {
            if f as usize >= file.faces || k == 0 || k > file.max_order || !(w > 0.0) {
                return Err(format!("invalid weight entry ({f}, {k}, {w})"));
            }
            table.add(f, k, w);
        }
        table.max_order = file.max_order;
        Ok(table)
    }
}

impl WeightTable {
    pub fn new(face_count: usize) -> WeightTable {
        WeightTable {
            rows: vec![Vec::new(); face_count],
            max_order: 0,
        }
    }

    pub fn face_count(&self) -> usize {
        self.rows.len()
    }

    /// Largest crossing count seen on any single ray.
    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn get(&self, face: u32, k: u32) -> f64 {
        self.rows[face as usize]
            .get(k as usize - 1)
            .copied()
            .unwrap_or(0.0)
    }

    fn add(&mut self, face: u32, k: u32, w: f64) {
        if w > 0.0 {
            let row = &mut self.rows[face as usize];
            if row.len() < k as usize {
                row.resize(k as usize, 0.0);
            }
            row[k as usize - 1] += w;
        }
    }

    fn note_order(&mut self, k: u32) {
        self.max_order = self.max_order.max(k);
    }

    /// Non-zero entries `(face, k, W(f, k))`.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(f, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(move |(k, &w)| (f as u32, k as u32 + 1, w))
        })
    }

    /// `Σ_f W(f, k)` for `k = 1..=max_order`.
    pub fn order_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.max_order as usize];
        for (_, k, w) in self.entries() {
            totals[k as usize - 1] += w;
        }
        totals
    }
}

/// A face crossing along one ray after ordering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub face: u32,
    pub order: u32,
    pub weight: f64,
}

/// Orders the raw intersections of one ray into crossings.
///
/// Hits are sorted by distance. Hits within [`COINCIDENT_EPS`] of each other
/// form a cluster; inside a cluster the front-facing hits form one crossing
/// that precedes the back-facing one. A crossing made of several faces (a
/// ray through a shared edge or vertex) takes a single order slot and is
/// credited to its lowest face index. A face is counted at most once per ray.
pub fn order_crossings(mesh: &Mesh, dir: DVec3, hits: &mut [RayHit], out: &mut Vec<Crossing>) {
    out.clear();
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
    let mut order = 0u32;
    let mut i = 0;
    while i < hits.len() {
        let start = hits[i].t;
        let mut j = i + 1;
        while j < hits.len() && hits[j].t - start <= COINCIDENT_EPS {
            j += 1;
        }
        let cluster = &hits[i..j];
        for front in [true, false] {
            let credited = cluster
                .iter()
                .filter(|h| (mesh.normal(h.face as usize).dot(dir) < 0.0) == front)
                .filter(|h| !out.iter().any(|c| c.face == h.face))
                .map(|h| h.face)
                .min();
            if let Some(face) = credited {
                order += 1;
                let weight = (-mesh.normal(face as usize).dot(dir)).max(0.0);
                out.push(Crossing {
                    face,
                    order,
                    weight,
                });
            }
        }
        i = j;
    }
}

/// Casts one primary ray per pixel from every view at `ray_resolution²` and
/// accumulates `W(f, k)`. The reduction runs in view, row, pixel order, so
/// the table does not depend on the thread count.
pub fn compute_weight_table(mesh: &Mesh, rig: &CameraRig, ray_resolution: u32) -> WeightTable {
    let bvh = Bvh::build(mesh);
    compute_weight_table_with(mesh, &bvh, rig, ray_resolution)
}

pub fn compute_weight_table_with(
    mesh: &Mesh,
    bvh: &Bvh,
    rig: &CameraRig,
    ray_resolution: u32,
) -> WeightTable {
    let mut table = WeightTable::new(mesh.face_count());
    for view in &rig.views {
        let view = view.with_resolution(ray_resolution, ray_resolution);
        let frame = view.frame();
        let rows: Vec<Vec<Crossing>> = (0..ray_resolution)
            .into_par_iter()
            .map(|y| {
                let mut hits = Vec::new();
                let mut crossings = Vec::new();
                let mut row = Vec::new();
                for x in 0..ray_resolution {
                    let dir = frame.pixel_ray(x, y);
                    hits.clear();
                    bvh.all_hits(frame.origin, dir, 0.0, &mut hits);
                    order_crossings(mesh, dir, &mut hits, &mut crossings);
                    row.extend_from_slice(&crossings);
                }
                row
            })
            .collect();
        for row in rows {
            for c in row {
                table.note_order(c.order);
                table.add(c.face, c.order, c.weight);
            }
        }
    }
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitLevelAssignment {
    pub h_max: u32,
    /// Level of every superface, in `1..=h_max`.
    pub superface_level: Vec<u32>,
    /// Level of every face via its superface.
    pub face_level: Vec<u32>,
    /// `Σ_{f ∈ SF} W(f, k)` for `k = 1..=max_order`, per superface.
    pub histograms: Vec<Vec<f64>>,
    /// Faces whose own dominant order differs from their superface's level.
    pub face_superface_disagreements: usize,
}

impl HitLevelAssignment {
    pub fn max_level(&self) -> u32 {
        self.superface_level.iter().copied().max().unwrap_or(1)
    }
}

/// Dominant order of a weight histogram: argmax with ties toward the smaller
/// order, clamped to `h_max`; an all-zero histogram maps to `h_max`.
pub fn dominant_order(histogram: &[f64], h_max: u32) -> u32 {
    let mut best: Option<(usize, f64)> = None;
    for (i, &w) in histogram.iter().enumerate() {
        if w > 0.0 && best.is_none_or(|(_, b)| w > b) {
            best = Some((i, w));
        }
    }
    match best {
        Some((i, _)) => (i as u32 + 1).min(h_max),
        None => h_max,
    }
}

pub fn assign_superface_levels(
    superfaces: &SuperfaceSet,
    table: &WeightTable,
    h_max: u32,
) -> HitLevelAssignment {
    assert!(h_max >= 1, "h_max must be at least 1");
    let orders = table.max_order() as usize;
    let mut histograms = vec![vec![0.0; orders]; superfaces.count];
    for (f, k, w) in table.entries() {
        let sf = superfaces.assignment[f as usize] as usize;
        histograms[sf][k as usize - 1] += w;
    }
    let superface_level: Vec<u32> = histograms.iter().map(|h| dominant_order(h, h_max)).collect();
    let face_level: Vec<u32> = superfaces
        .assignment
        .iter()
        .map(|&s| superface_level[s as usize])
        .collect();

    let mut disagreements = 0;
    let mut row = vec![0.0; orders];
    for f in 0..table.face_count() {
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = table.get(f as u32, k as u32 + 1);
        }
        if row.iter().any(|&w| w > 0.0) && dominant_order(&row, h_max) != face_level[f] {
            disagreements += 1;
        }
    }
    HitLevelAssignment {
        h_max,
        superface_level,
        face_level,
        histograms,
        face_superface_disagreements: disagreements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::build_camera_rig;
    use crate::fixtures;
    use crate::superface::segment_superfaces;

    #[test]
    fn dominant_order_rules() {
        assert_eq!(dominant_order(&[1.0, 3.0, 3.0], 4), 2);
        assert_eq!(dominant_order(&[2.0, 2.0], 4), 1);
        assert_eq!(dominant_order(&[0.0, 0.0, 0.0, 0.0, 0.0, 9.0], 4), 4);
        assert_eq!(dominant_order(&[], 4), 4);
        assert_eq!(dominant_order(&[0.0, 0.0], 3), 3);
    }

    #[test]
    fn unhit_superface_gets_h_max() {
        let mut table = WeightTable::new(3);
        table.note_order(2);
        table.add(0, 1, 1.0);
        table.add(1, 2, 0.5);
        let set = SuperfaceSet::singletons(3);
        let a = assign_superface_levels(&set, &table, 4);
        assert_eq!(a.superface_level, vec![1, 2, 4]);
        assert_eq!(a.face_level, vec![1, 2, 4]);
    }

    #[test]
    fn crossing_order_and_backface_slots() {
        let cube = fixtures::cube();
        let bvh = Bvh::build(&cube);
        let dir = DVec3::NEG_X;
        let mut hits = Vec::new();
        bvh.all_hits(DVec3::new(3.0, 0.1, 0.2), dir, 0.0, &mut hits);
        let mut out = Vec::new();
        order_crossings(&cube, dir, &mut hits, &mut out);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].order, out[0].weight), (1, 1.0));
        assert_eq!((out[1].order, out[1].weight), (2, 0.0));

        // Through the diagonal edge of the +X side: two faces, one crossing.
        hits.clear();
        bvh.all_hits(DVec3::new(3.0, 0.0, 0.0), dir, 0.0, &mut hits);
        assert!(hits.len() >= 2);
        order_crossings(&cube, dir, &mut hits, &mut out);
        assert_eq!(out.iter().map(|c| c.order).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn coincident_shell_front_first() {
        // Two back-to-back copies of the same square: the front-facing one
        // takes order 1 whichever index it has.
        let q = fixtures::quad();
        let shell = q.flipped().merged(&q);
        let bvh = Bvh::build(&shell);
        let dir = DVec3::NEG_X;
        let mut hits = Vec::new();
        bvh.all_hits(DVec3::new(2.0, 0.1, 0.3), dir, 0.0, &mut hits);
        let mut out = Vec::new();
        order_crossings(&shell, dir, &mut hits, &mut out);
        assert_eq!(out.len(), 2);
        assert!(out[0].face >= 2 && out[0].weight == 1.0);
        assert!(out[1].face < 2 && out[1].weight == 0.0);
    }

    #[test]
    fn head_on_triangle_weight_is_sum_of_cosines() {
        let tri = Mesh::from_triangles(
            vec![
                DVec3::new(0.0, -0.05, 0.05),
                DVec3::new(0.0, -0.05, -0.05),
                DVec3::new(0.0, 0.05, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let rig = build_camera_rig(1.8, 45.0, 64).unwrap().subset(&[0]);
        let table = compute_weight_table(&tri, &rig, 64);
        // Independent count: pixels whose ray crosses the triangle.
        let frame = rig.views[0].with_resolution(64, 64).frame();
        let (mut count, mut cos_sum) = (0usize, 0.0);
        for y in 0..64 {
            for x in 0..64 {
                let d = frame.pixel_ray(x, y);
                let t = -frame.origin.x / d.x;
                let p = frame.origin + d * t;
                // Inside test via half-planes of the YZ triangle.
                let [a, b, c] = tri.triangle(0);
                let s = |u: DVec3, v: DVec3| (v.y - u.y) * (p.z - u.z) - (v.z - u.z) * (p.y - u.y);
                let (s0, s1, s2) = (s(a, b), s(b, c), s(c, a));
                if (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0) {
                    count += 1;
                    cos_sum += -d.x;
                }
            }
        }
        assert!(count > 0);
        let w = table.get(0, 1);
        assert!((w - cos_sum).abs() < 1e-9);
        // Near the optical axis every cosine is essentially 1.
        assert!((w / count as f64 - 1.0).abs() < 1e-3);
        assert_eq!(table.max_order(), 1);
    }

    #[test]
    fn cube_levels_all_one() {
        // The rig covers the upper hemisphere only: no ray can reach the
        // bottom (-Y) side from outside, so its row stays empty and it falls
        // back to H_max. Every other side is first-hit only.
        let cube = fixtures::cube();
        let rig = build_camera_rig(1.8, 45.0, 64).unwrap();
        let table = compute_weight_table(&cube, &rig, 64);
        for f in 0..12u32 {
            let bottom = cube.normal(f as usize).y < -0.5;
            assert_eq!(table.get(f, 1) > 0.0, !bottom, "face {f}");
            for k in 2..=table.max_order() {
                assert_eq!(table.get(f, k), 0.0);
            }
        }
        let set = segment_superfaces(&cube, &cube.build_topology(), 30.0);
        let a = assign_superface_levels(&set, &table, 4);
        for (s, &level) in a.superface_level.iter().enumerate() {
            let bottom = cube.normal(set.members()[s][0] as usize).y < -0.5;
            assert_eq!(level, if bottom { 4 } else { 1 });
        }
        assert_eq!(a.face_superface_disagreements, 0);
    }

    #[test]
    fn table_serde_round_trip() {
        let cube = fixtures::cube();
        let rig = build_camera_rig(2.0, 40.0, 16).unwrap();
        let table = compute_weight_table(&cube, &rig, 16);
        let json = serde_json::to_string(&table).unwrap();
        let back: WeightTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
        assert!(serde_json::from_str::<WeightTable>(
            r#"{"faces":1,"max_order":1,"entries":[[0,1,-1.0]]}"#
        )
        .is_err());
    }
}
