//! Independent reference implementations used by the integration tests.
//! Nothing here shares code with the library's ray caster or rasterizer.

#![allow(dead_code)]

use std::collections::BTreeMap;

use glam::DVec3;
use layertex::camera::CameraRig;
use layertex::mesh::Mesh;
use rayon::prelude::*;

/// Ray/triangle by plane intersection plus an inside test on edge cross
/// products (inclusive of edges), double-sided.
pub fn intersect_plane_inside(tri: &[DVec3; 3], o: DVec3, d: DVec3) -> Option<f64> {
    let n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    let denom = n.dot(d);
    if denom.abs() < 1e-15 * n.length() {
        return None;
    }
    let t = n.dot(tri[0] - o) / denom;
    if t <= 0.0 {
        return None;
    }
    let p = o + d * t;
    let scale = n.length_squared();
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        if (b - a).cross(p - a).dot(n) < -1e-12 * scale {
            return None;
        }
    }
    Some(t)
}

/// All hits along a ray, sorted by `(t, face)`.
pub fn brute_hits(mesh: &Mesh, o: DVec3, d: DVec3) -> Vec<(f64, u32)> {
    let mut hits: Vec<(f64, u32)> = (0..mesh.face_count())
        .filter_map(|f| intersect_plane_inside(&mesh.triangle(f), o, d).map(|t| (t, f as u32)))
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits
}

/// `W(f, k)` by exhaustive casting. Ordering rule: near-coincident hits
/// (1e-6) group together; within a group the front-facing faces take one
/// order slot before the back-facing ones, credited to the lowest index,
/// and a face counts only at its first crossing.
pub fn brute_weight_table(mesh: &Mesh, rig: &CameraRig, res: u32) -> Vec<BTreeMap<u32, f64>> {
    let per_view: Vec<Vec<BTreeMap<u32, f64>>> = rig
        .views
        .iter()
        .map(|view| {
            let v = view.with_resolution(res, res);
            let frame = v.frame();
            let rows: Vec<Vec<(u32, u32, f64)>> = (0..res)
                .into_par_iter()
                .map(|y| {
                    let mut out = Vec::new();
                    for x in 0..res {
                        let d = frame.pixel_ray(x, y);
                        let hits = brute_hits(mesh, frame.origin, d);
                        let mut seen: Vec<u32> = Vec::new();
                        let mut k = 0;
                        let mut i = 0;
                        while i < hits.len() {
                            let mut j = i;
                            while j < hits.len() && hits[j].0 - hits[i].0 <= 1e-6 {
                                j += 1;
                            }
                            let group = &hits[i..j];
                            for want_front in [true, false] {
                                let mut faces: Vec<u32> = group
                                    .iter()
                                    .map(|h| h.1)
                                    .filter(|&f| (mesh.normal(f as usize).dot(d) < 0.0) == want_front)
                                    .filter(|f| !seen.contains(f))
                                    .collect();
                                faces.sort();
                                if let Some(&f) = faces.first() {
                                    k += 1;
                                    seen.push(f);
                                    out.push((f, k, f64::max(-mesh.normal(f as usize).dot(d), 0.0)));
                                }
                            }
                            i = j;
                        }
                    }
                    out
                })
                .collect();
            let mut table = vec![BTreeMap::new(); mesh.face_count()];
            for (f, k, w) in rows.into_iter().flatten() {
                *table[f as usize].entry(k).or_insert(0.0) += w;
            }
            table
        })
        .collect();
    let mut table = vec![BTreeMap::new(); mesh.face_count()];
    for view in per_view {
        for (f, row) in view.into_iter().enumerate() {
            for (k, w) in row {
                *table[f].entry(k).or_insert(0.0) += w;
            }
        }
    }
    table
}

/// Argmax with ties to the smaller order, clamped; empty → `h_max`.
pub fn oracle_level(hist: &BTreeMap<u32, f64>, h_max: u32) -> u32 {
    let mut best = (h_max, 0.0);
    let mut found = false;
    for (&k, &w) in hist {
        if w > 0.0 && (!found || w > best.1) {
            best = (k, w);
            found = true;
        }
    }
    if found {
        best.0.min(h_max)
    } else {
        h_max
    }
}

/// Superface levels from a per-face oracle table.
pub fn oracle_superface_levels(
    table: &[BTreeMap<u32, f64>],
    assignment: &[u32],
    count: usize,
    h_max: u32,
) -> Vec<u32> {
    let mut hist = vec![BTreeMap::new(); count];
    for (f, row) in table.iter().enumerate() {
        for (&k, &w) in row {
            *hist[assignment[f] as usize].entry(k).or_insert(0.0) += w;
        }
    }
    hist.iter().map(|h| oracle_level(h, h_max)).collect()
}

/// Entry distances of a ray into concentric spheres about the origin,
/// ordered along the ray. Each element is `(t, radius, entering)`.
pub fn analytic_sphere_crossings(o: DVec3, d: DVec3, radii: &[f64]) -> Vec<(f64, f64, bool)> {
    let mut out = Vec::new();
    for &r in radii {
        let b = o.dot(d);
        let c = o.length_squared() - r * r;
        let disc = b * b - c;
        if disc <= 0.0 {
            continue;
        }
        let s = disc.sqrt();
        out.push((-b - s, r, true));
        out.push((-b + s, r, false));
    }
    out.retain(|c| c.0 > 0.0);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Nearest face under the given effective orientation: a face occludes iff
/// its (possibly flipped) normal faces the ray. Ties within 1e-5 go to the
/// unflipped face, then the lower index.
pub fn brute_visible_face(
    mesh: &Mesh,
    o: DVec3,
    d: DVec3,
    include: impl Fn(usize) -> bool,
    flipped: impl Fn(usize) -> bool,
) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for f in 0..mesh.face_count() {
        if !include(f) {
            continue;
        }
        let n = if flipped(f) { -mesh.normal(f) } else { mesh.normal(f) };
        if n.dot(d) >= 0.0 {
            continue;
        }
        let Some(t) = intersect_plane_inside(&mesh.triangle(f), o, d) else {
            continue;
        };
        best = match best {
            None => Some((f as u32, t)),
            Some((g, tg)) => {
                if (t - tg).abs() <= 1e-5 {
                    let key = |h: u32| (flipped(h as usize), h);
                    if key(f as u32) < key(g) {
                        Some((f as u32, t.min(tg)))
                    } else {
                        Some((g, t.min(tg)))
                    }
                } else if t < tg {
                    Some((f as u32, t))
                } else {
                    Some((g, tg))
                }
            }
        };
    }
    best
}

/// Is `p` on `face` visible from `eye` under flip/cull semantics? Checks
/// every other triangle against the open segment.
pub fn brute_point_visible(
    mesh: &Mesh,
    face: usize,
    p: DVec3,
    eye: DVec3,
    flipped: impl Fn(usize) -> bool,
) -> bool {
    let to_p = p - eye;
    let dist = to_p.length();
    let d = to_p / dist;
    let n = |f: usize| if flipped(f) { -mesh.normal(f) } else { mesh.normal(f) };
    if n(face).dot(d) >= 0.0 {
        return false;
    }
    (0..mesh.face_count()).all(|g| {
        if g == face || n(g).dot(d) >= 0.0 {
            return true;
        }
        match intersect_plane_inside(&mesh.triangle(g), eye, d) {
            Some(t) => t >= dist - 1e-5,
            None => true,
        }
    })
}

pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (3 * a.len()) as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

/// Defaults scaled down for end-to-end runs: 256² rays and views, 512² UVs.
pub fn small_config() -> layertex::pipeline::PipelineConfig {
    layertex::pipeline::PipelineConfig {
        ray_resolution: 256,
        view_resolution: 256,
        uv_resolution: 512,
        ..Default::default()
    }
}

/// Writes `mesh` as `name` under `dir` and returns the path.
pub fn write_fixture(dir: &std::path::Path, name: &str, mesh: &Mesh) -> std::path::PathBuf {
    let path = dir.join(name);
    mesh.write_obj(&path).unwrap();
    path
}
