//! Fallback UV atlas for meshes without texture coordinates.
//!
//! Each superface becomes one chart: its faces are projected onto the plane
//! orthogonal to the superface's area-weighted mean normal, every chart is
//! scaled by the same global factor (so UV area tracks 3D area) and the
//! charts' bounding rectangles are shelf-packed with a pixel gutter.

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::superface::SuperfaceSet;

pub const DEFAULT_GUTTER_PX: u32 = 4;

/// Fraction of the texture the first packing attempt aims to fill.
const TARGET_FILL: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRect {
    pub superface: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UvAtlas {
    /// Per-corner UVs in `[0, 1]²`, `v` pointing up.
    pub uv: Vec<[DVec2; 3]>,
    /// Chart rectangles in texel coordinates (row 0 at the top).
    pub charts: Vec<ChartRect>,
    pub gutter_px: u32,
    pub texture_res: u32,
    /// Texels per scene unit.
    pub scale: f64,
}

struct Chart {
    superface: u32,
    faces: Vec<u32>,
    /// Projected corner positions, parallel to `faces`.
    corners: Vec<[DVec2; 3]>,
    min: DVec2,
    extent: DVec2,
}

pub fn generate_uv_atlas(
    mesh: &Mesh,
    superfaces: &SuperfaceSet,
    texture_res: u32,
    gutter_px: u32,
) -> Result<UvAtlas> {
    let charts: Vec<Chart> = superfaces
        .members()
        .into_iter()
        .enumerate()
        .map(|(id, faces)| project_chart(mesh, id as u32, faces))
        .collect();

    let res = texture_res as f64;
    let g = gutter_px as f64;
    let avail = res - 2.0 * g;
    if avail <= 0.0 {
        return Err(Error::Validation(format!(
            "gutter {gutter_px} leaves no room in a {texture_res}² atlas"
        )));
    }

    // Solve Σ (w·s + g)(h·s + g) = fill · res² for s.
    let a: f64 = charts.iter().map(|c| c.extent.x * c.extent.y).sum();
    let b: f64 = charts.iter().map(|c| g * (c.extent.x + c.extent.y)).sum();
    let c0 = charts.len() as f64 * g * g - TARGET_FILL * res * res;
    let initial = if a > 0.0 {
        (-b + (b * b - 4.0 * a * c0).max(0.0).sqrt()) / (2.0 * a)
    } else {
        let longest = charts.iter().map(|c| c.extent.max_element()).fold(0.0, f64::max);
        avail / longest.max(1e-12)
    };
    if !(initial > 0.0) {
        return Err(Error::Packing {
            required_scale: 0.0,
        });
    }

    let placed = match shelf_pack(&charts, initial, texture_res, gutter_px) {
        Ok(p) => (p, initial),
        Err(overflow) => {
            let retry = initial * overflow.shrink_factor(avail) * 0.97;
            log::debug!("atlas packing retry: scale {initial:.3} -> {retry:.3}");
            match shelf_pack(&charts, retry, texture_res, gutter_px) {
                Ok(p) => (p, retry),
                Err(again) => {
                    return Err(Error::Packing {
                        required_scale: retry * again.shrink_factor(avail),
                    })
                }
            }
        }
    };
    let (rects, scale) = placed;

    let mut uv = vec![[DVec2::ZERO; 3]; mesh.face_count()];
    for (chart, rect) in charts.iter().zip(&rects) {
        let origin = DVec2::new(rect.x as f64, rect.y as f64);
        for (&f, corners) in chart.faces.iter().zip(&chart.corners) {
            uv[f as usize] = corners.map(|p| {
                let t = origin + (p - chart.min) * scale;
                DVec2::new(t.x / res, 1.0 - t.y / res)
            });
        }
    }
    Ok(UvAtlas {
        uv,
        charts: rects,
        gutter_px,
        texture_res,
        scale,
    })
}

fn project_chart(mesh: &Mesh, superface: u32, faces: Vec<u32>) -> Chart {
    let normal = faces
        .iter()
        .map(|&f| mesh.normal(f as usize) * mesh.face_area(f as usize))
        .sum::<DVec3>()
        .try_normalize()
        .unwrap_or_else(|| mesh.normal(faces[0] as usize));
    let (u_axis, v_axis) = plane_basis(normal);
    let corners: Vec<[DVec2; 3]> = faces
        .iter()
        .map(|&f| {
            mesh.triangle(f as usize)
                .map(|p| DVec2::new(p.dot(u_axis), p.dot(v_axis)))
        })
        .collect();
    let mut min = DVec2::splat(f64::INFINITY);
    let mut max = DVec2::splat(f64::NEG_INFINITY);
    for p in corners.iter().flatten() {
        min = min.min(*p);
        max = max.max(*p);
    }
    Chart {
        superface,
        faces,
        corners,
        min,
        extent: max - min,
    }
}

/// Right-handed basis `(u, v)` of the plane orthogonal to `n`, with `u × v = n`.
fn plane_basis(n: DVec3) -> (DVec3, DVec3) {
    let a = n.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        DVec3::X
    } else if a.y <= a.z {
        DVec3::Y
    } else {
        DVec3::Z
    };
    let u = helper.cross(n).normalize();
    // Image rows grow downwards, so flip v to keep charts unmirrored in UV.
    let v = n.cross(u);
    (u, -v)
}

struct Overflow {
    needed_height: f64,
    widest: f64,
}

impl Overflow {
    fn shrink_factor(&self, avail: f64) -> f64 {
        (avail / self.needed_height).sqrt().min(avail / self.widest).min(1.0)
    }
}

/// Shelf packing, tallest first, left-to-right then top-to-bottom.
fn shelf_pack(charts: &[Chart], scale: f64, res: u32, gutter: u32) -> Result<Vec<ChartRect>, Overflow> {
    let sized: Vec<(u32, u32)> = charts
        .iter()
        .map(|c| {
            (
                ((c.extent.x * scale).ceil() as u32).max(1),
                ((c.extent.y * scale).ceil() as u32).max(1),
            )
        })
        .collect();
    let mut order: Vec<usize> = (0..charts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(sized[i].1), charts[i].superface));

    let limit = res - gutter;
    let (mut x, mut y, mut shelf) = (gutter, gutter, 0u32);
    let mut rects = vec![None; charts.len()];
    let mut fits = true;
    let mut widest = 0u32;
    for &i in &order {
        let (w, h) = sized[i];
        widest = widest.max(w);
        if x + w > limit && x > gutter {
            y += shelf + gutter;
            x = gutter;
            shelf = 0;
        }
        if x + w > limit || y + h > limit {
            fits = false;
        }
        rects[i] = Some(ChartRect {
            superface: charts[i].superface,
            x,
            y,
            width: w,
            height: h,
        });
        x += w + gutter;
        shelf = shelf.max(h);
    }
    if fits {
        Ok(rects.into_iter().map(Option::unwrap).collect())
    } else {
        Err(Overflow {
            needed_height: (y + shelf - gutter) as f64,
            widest: widest as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::superface::segment_superfaces;

    fn signed_area(t: &[DVec2; 3]) -> f64 {
        0.5 * (t[1] - t[0]).perp_dot(t[2] - t[0])
    }

    /// Texels whose centre lies inside any face of each chart, by brute force.
    fn chart_texels(atlas: &UvAtlas, set: &SuperfaceSet) -> Vec<Vec<(i64, i64)>> {
        let res = atlas.texture_res as f64;
        let mut out = vec![Vec::new(); set.count];
        for (f, tri) in atlas.uv.iter().enumerate() {
            let px = tri.map(|p| DVec2::new(p.x * res, (1.0 - p.y) * res));
            let lo = px[0].min(px[1]).min(px[2]).floor();
            let hi = px[0].max(px[1]).max(px[2]).ceil();
            for y in lo.y as i64..hi.y as i64 {
                for x in lo.x as i64..hi.x as i64 {
                    let c = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let s = [
                        (px[1] - px[0]).perp_dot(c - px[0]),
                        (px[2] - px[1]).perp_dot(c - px[1]),
                        (px[0] - px[2]).perp_dot(c - px[2]),
                    ];
                    if s.iter().all(|&v| v >= 0.0) || s.iter().all(|&v| v <= 0.0) {
                        out[set.assignment[f] as usize].push((x, y));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_quad_axis_aligned() {
        let quad = fixtures::quad();
        let set = segment_superfaces(&quad, &quad.build_topology(), 45.0);
        let atlas = generate_uv_atlas(&quad, &set, 256, 4).unwrap();
        assert_eq!(atlas.charts.len(), 1);
        let r = &atlas.charts[0];
        assert!(r.width <= 256 - 8 && r.height <= 256 - 8);
        for tri in &atlas.uv {
            for p in tri {
                assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            }
            // Every edge is horizontal, vertical or the diagonal.
            for e in 0..3 {
                let d = tri[(e + 1) % 3] - tri[e];
                let axis = d.x.abs() < 1e-12 || d.y.abs() < 1e-12;
                let diag = (d.x.abs() - d.y.abs()).abs() < 1e-12;
                assert!(axis || diag);
            }
            assert!(signed_area(tri) > 0.0, "chart must not be mirrored");
        }
    }

    #[test]
    fn cube_charts_disjoint_with_gutter() {
        let cube = fixtures::cube();
        let set = segment_superfaces(&cube, &cube.build_topology(), 45.0);
        assert_eq!(set.count, 6);
        let atlas = generate_uv_atlas(&cube, &set, 1024, 4).unwrap();
        assert_eq!(atlas.charts.len(), 6);
        let texels = chart_texels(&atlas, &set);
        let mut label = std::collections::HashMap::new();
        for (i, ts) in texels.iter().enumerate() {
            assert!(!ts.is_empty());
            for t in ts {
                label.insert(*t, i);
            }
        }
        // Any texel of another chart within Chebyshev distance 3 is a violation.
        for (&(x, y), &i) in &label {
            for dy in -3..=3 {
                for dx in -3..=3 {
                    if let Some(&j) = label.get(&(x + dx, y + dy)) {
                        assert_eq!(i, j, "charts {i} and {j} closer than 4 px at ({x}, {y})");
                    }
                }
            }
        }
    }

    #[test]
    fn uv_area_tracks_surface_area() {
        let sphere = fixtures::icosphere(3, 0.5, DVec3::ZERO);
        let set = segment_superfaces(&sphere, &sphere.build_topology(), 45.0);
        let atlas = generate_uv_atlas(&sphere, &set, 1024, 4).unwrap();
        let s2 = (atlas.scale / 1024.0).powi(2);
        let mut uv_area = vec![0.0; set.count];
        let mut area = vec![0.0; set.count];
        for f in 0..sphere.face_count() {
            let sf = set.assignment[f] as usize;
            let a = signed_area(&atlas.uv[f]);
            assert!(a > 0.0);
            uv_area[sf] += a;
            area[sf] += sphere.face_area(f);
        }
        for (u, a) in uv_area.iter().zip(&area) {
            let ratio = u / (a * s2);
            assert!((0.8..=1.0 + 1e-9).contains(&ratio), "ratio {ratio}");
        }
        let texels = chart_texels(&atlas, &set);
        let mut owner = std::collections::HashMap::new();
        for (chart, ts) in texels.iter().enumerate() {
            for t in ts {
                if let Some(prev) = owner.insert(*t, chart) {
                    assert_eq!(prev, chart, "texel {t:?} claimed twice");
                }
            }
        }
    }

    #[test]
    fn impossible_packing_reports_scale() {
        let sphere = fixtures::icosphere(3, 0.5, DVec3::ZERO);
        // One chart per face, each needs at least 1 px plus a 4 px gutter.
        let set = SuperfaceSet::singletons(sphere.face_count());
        match generate_uv_atlas(&sphere, &set, 64, 4) {
            Err(Error::Packing { required_scale }) => assert!(required_scale >= 0.0),
            other => panic!("expected packing error, got {:?}", other.map(|a| a.scale)),
        }
    }
}
