//! Procedural test meshes. All are CCW-outward and fit the unit box.

use std::collections::HashMap;
use std::f64::consts::TAU;

use glam::DVec3;

use crate::mesh::Mesh;

fn build(vertices: Vec<DVec3>, faces: Vec<[u32; 3]>) -> Mesh {
    Mesh::from_triangles(vertices, faces, None).expect("fixture geometry is valid")
}

/// Axis-aligned cube `[-0.5, 0.5]³`, 12 triangles.
pub fn cube() -> Mesh {
    box_mesh(DVec3::splat(-0.5), DVec3::splat(0.5), 1)
}

/// Closed axis-aligned box with each side split into `n × n` quads.
pub fn box_mesh(lo: DVec3, hi: DVec3, n: usize) -> Mesh {
    let mut b = Builder::default();
    b.box_sides(lo, hi, n, true, true);
    b.finish()
}

/// Unit square in the `x = 0` plane facing `+X`.
pub fn quad() -> Mesh {
    let mut b = Builder::default();
    b.quad(
        DVec3::new(0.0, -0.5, 0.5),
        DVec3::new(0.0, -0.5, -0.5),
        DVec3::new(0.0, 0.5, -0.5),
        DVec3::new(0.0, 0.5, 0.5),
        1,
    );
    b.finish()
}

/// Subdivided icosahedron projected onto a sphere: `20 · 4^subdivisions` faces.
pub fn icosphere(subdivisions: u32, radius: f64, center: DVec3) -> Mesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<DVec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| DVec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<DVec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    build(
        verts.into_iter().map(|v| center + v * radius).collect(),
        faces,
    )
}

/// Outer sphere `r = 0.5` around an inner sphere `r = 0.25`, both outward.
pub fn nested_spheres(subdivisions: u32) -> Mesh {
    icosphere(subdivisions, 0.5, DVec3::ZERO).merged(&icosphere(subdivisions, 0.25, DVec3::ZERO))
}

/// Three concentric outward spheres, radii 0.5, 0.35 and 0.2.
pub fn concentric_shells(subdivisions: u32) -> Mesh {
    icosphere(subdivisions, 0.5, DVec3::ZERO)
        .merged(&icosphere(subdivisions, 0.35, DVec3::ZERO))
        .merged(&icosphere(subdivisions, 0.2, DVec3::ZERO))
}

/// A thick-walled box open at the top (`+Y`) with a small block floating in
/// the cavity. Watertight: outer walls, rim and cavity walls form one closed
/// surface, the block another. Each wall is split into `n × n` quads.
pub fn open_box(n: usize) -> Mesh {
    let (o, i, top) = (0.5, 0.4, 0.5);
    let mut b = Builder::default();
    // Outer walls and floor, no lid.
    b.box_sides(DVec3::splat(-o), DVec3::new(o, top, o), n, true, false);
    // Cavity walls face inwards, so build them outward and flip.
    let mut cavity = Builder::default();
    cavity.box_sides(DVec3::new(-i, -i, -i), DVec3::new(i, top, i), n, true, false);
    b.append_flipped(cavity);
    // Rim between the two wall sets at y = top.
    let ring = |r: f64| {
        [
            DVec3::new(-r, top, -r),
            DVec3::new(r, top, -r),
            DVec3::new(r, top, r),
            DVec3::new(-r, top, r),
        ]
    };
    let (outer, inner) = (ring(o), ring(i));
    for k in 0..4 {
        let n1 = (k + 1) % 4;
        b.quad(outer[k], inner[k], inner[n1], outer[n1], n);
    }
    b.box_sides(
        DVec3::new(-0.15, -0.3, -0.15),
        DVec3::new(0.15, 0.0, 0.15),
        n,
        true,
        true,
    );
    b.finish()
}

/// Torus in the XZ plane with `major × minor` quads (`2·major·minor` faces).
pub fn torus(major: usize, minor: usize, major_radius: f64, minor_radius: f64) -> Mesh {
    let mut verts = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = TAU * i as f64 / major as f64;
        for j in 0..minor {
            let v = TAU * j as f64 / minor as f64;
            let ring = major_radius + minor_radius * v.cos();
            verts.push(DVec3::new(ring * u.cos(), minor_radius * v.sin(), ring * u.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % major) * minor + (j % minor)) as u32;
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, c, b]);
            faces.push([a, d, c]);
        }
    }
    build(verts, faces)
}

#[derive(Default)]
struct Builder {
    verts: Vec<DVec3>,
    faces: Vec<[u32; 3]>,
}

impl Builder {
    /// Adds quad `a b c d` (CCW seen from the front) split into `n × n` cells.
    fn quad(&mut self, a: DVec3, b: DVec3, c: DVec3, d: DVec3, n: usize) {
        let base = self.verts.len() as u32;
        for j in 0..=n {
            let t = j as f64 / n as f64;
            for i in 0..=n {
                let s = i as f64 / n as f64;
                let p = a * (1.0 - s) * (1.0 - t) + b * s * (1.0 - t) + c * s * t + d * (1.0 - s) * t;
                self.verts.push(p);
            }
        }
        let at = |i: usize, j: usize| base + (j * (n + 1) + i) as u32;
        for j in 0..n {
            for i in 0..n {
                let (p0, p1, p2, p3) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                self.faces.push([p0, p1, p2]);
                self.faces.push([p0, p2, p3]);
            }
        }
    }

    fn box_sides(&mut self, lo: DVec3, hi: DVec3, n: usize, bottom: bool, top: bool) {
        let c = |x: bool, y: bool, z: bool| {
            DVec3::new(
                if x { hi.x } else { lo.x },
                if y { hi.y } else { lo.y },
                if z { hi.z } else { lo.z },
            )
        };
        let (f, t) = (false, true);
        // +X, -X, +Z, -Z
        self.quad(c(t, f, t), c(t, f, f), c(t, t, f), c(t, t, t), n);
        self.quad(c(f, f, f), c(f, f, t), c(f, t, t), c(f, t, f), n);
        self.quad(c(f, f, t), c(t, f, t), c(t, t, t), c(f, t, t), n);
        self.quad(c(t, f, f), c(f, f, f), c(f, t, f), c(t, t, f), n);
        if top {
            self.quad(c(f, t, t), c(t, t, t), c(t, t, f), c(f, t, f), n);
        }
        if bottom {
            self.quad(c(f, f, f), c(t, f, f), c(t, f, t), c(f, f, t), n);
        }
    }

    fn append_flipped(&mut self, other: Builder) {
        let base = self.verts.len() as u32;
        self.verts.extend(other.verts);
        self.faces
            .extend(other.faces.into_iter().map(|[a, b, c]| [a + base, c + base, b + base]));
    }

    /// Welds vertices that agree to 1e-9 so sides share edges.
    fn finish(self) -> Mesh {
        let mut index = std::collections::HashMap::new();
        let mut verts = Vec::new();
        let remap: Vec<u32> = self
            .verts
            .iter()
            .map(|v| {
                *index.entry(v.to_array().map(|c| (c * 1e9).round() as i64)).or_insert_with(|| {
                    verts.push(*v);
                    verts.len() as u32 - 1
                })
            })
            .collect();
        let faces = self.faces.iter().map(|f| f.map(|i| remap[i as usize])).collect();
        build(verts, faces)
    }
}
