//! Indexed triangle meshes: OBJ ingestion, unit-box normalization and
//! edge adjacency.
//!
//! Faces are oriented by winding: counter-clockwise vertices (seen from
//! outside) give an outward normal. No global reorientation is attempted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use glam::{DVec2, DVec3};

use crate::error::{Error, Result};

/// Faces whose area (measured in the unit-box frame) is at or below this are
/// dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<DVec3>,
    faces: Vec<[u32; 3]>,
    uv: Option<Vec<[DVec2; 3]>>,
    face_normals: Vec<DVec3>,
    superface_id: Option<Vec<u32>>,
    dropped_faces: usize,
}

impl Mesh {
    /// Builds a mesh from raw geometry. Out-of-range indices are an error;
    /// degenerate faces are dropped and counted.
    pub fn from_triangles(
        vertices: Vec<DVec3>,
        faces: Vec<[u32; 3]>,
        uv: Option<Vec<[DVec2; 3]>>,
    ) -> Result<Mesh> {
        if let Some(uv) = &uv {
            if uv.len() != faces.len() {
                return Err(Error::Validation(format!(
                    "{} UV triples for {} faces",
                    uv.len(),
                    faces.len()
                )));
            }
        }
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v as usize >= n) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("face {i} references vertex {bad} of {n}"),
                });
            }
        }

        let extent = bounds(&vertices)
            .map(|(lo, hi)| (hi - lo).max_element())
            .unwrap_or(0.0);
        let min_area = DEGENERATE_AREA * extent * extent;

        let mut kept_faces = Vec::with_capacity(faces.len());
        let mut kept_uv = uv.as_ref().map(|_| Vec::with_capacity(faces.len()));
        let mut normals = Vec::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            let cross = raw_cross(&vertices, f);
            let area = 0.5 * cross.length();
            if !(area > min_area) {
                continue;
            }
            kept_faces.push(*f);
            normals.push(cross / cross.length());
            if let (Some(dst), Some(src)) = (kept_uv.as_mut(), uv.as_ref()) {
                dst.push(src[i]);
            }
        }
        let dropped = faces.len() - kept_faces.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate face(s)");
        }
        if kept_faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Mesh {
            vertices,
            faces: kept_faces,
            uv: kept_uv,
            face_normals: normals,
            superface_id: None,
            dropped_faces: dropped,
        })
    }

    pub fn vertices(&self) -> &[DVec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_normals(&self) -> &[DVec3] {
        &self.face_normals
    }

    pub fn normal(&self, face: usize) -> DVec3 {
        self.face_normals[face]
    }

    /// Per-corner UVs, if the mesh carries them.
    pub fn uv(&self) -> Option<&[[DVec2; 3]]> {
        self.uv.as_deref()
    }

    pub fn superface_id(&self) -> Option<&[u32]> {
        self.superface_id.as_deref()
    }

    /// Number of degenerate faces discarded when the mesh was built.
    pub fn dropped_faces(&self) -> usize {
        self.dropped_faces
    }

    pub fn triangle(&self, face: usize) -> [DVec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * raw_cross(&self.vertices, &self.faces[face]).length()
    }

    pub fn centroid(&self, face: usize) -> DVec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (DVec3, DVec3) {
        bounds(&self.vertices).expect("mesh has vertices")
    }

    pub fn with_uv(mut self, uv: Vec<[DVec2; 3]>) -> Mesh {
        assert_eq!(uv.len(), self.faces.len());
        self.uv = Some(uv);
        self
    }

    pub fn with_superfaces(mut self, ids: Vec<u32>) -> Mesh {
        assert_eq!(ids.len(), self.faces.len());
        self.superface_id = Some(ids);
        self
    }

    /// Reverses every face's winding, which negates every normal exactly.
    pub fn flipped(&self) -> Mesh {
        let mut out = self.clone();
        for f in &mut out.faces {
            f.swap(1, 2);
        }
        if let Some(uv) = &mut out.uv {
            for t in uv.iter_mut() {
                t.swap(1, 2);
            }
        }
        for n in &mut out.face_normals {
            *n = -*n;
        }
        out
    }

    /// Concatenates two meshes; UVs survive only when both carry them.
    pub fn merged(&self, other: &Mesh) -> Mesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|v| v + offset)));
        let mut normals = self.face_normals.clone();
        normals.extend_from_slice(&other.face_normals);
        let uv = match (&self.uv, &other.uv) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Mesh {
            vertices,
            faces,
            uv,
            face_normals: normals,
            superface_id: None,
            dropped_faces: self.dropped_faces + other.dropped_faces,
        }
    }

    /// Uniformly scales and translates so the bounding box is centred at the
    /// origin with its longest side equal to 1.
    pub fn normalize_unit_box(&self) -> Result<Mesh> {
        let (lo, hi) = self.bounds();
        let extent = (hi - lo).max_element();
        if !(extent > 0.0) {
            return Err(Error::ZeroExtent);
        }
        let center = (lo + hi) * 0.5;
        let scale = 1.0 / extent;
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = (*v - center) * scale;
        }
        Ok(out)
    }

    /// Every face whose edges are shared with this face, ascending.
    pub fn build_topology(&self) -> Adjacency {
        let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (i, f) in self.faces.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push(i as u32);
            }
        }
        let mut neighbors = vec![Vec::new(); self.faces.len()];
        for sharing in edges.values() {
            for &f in sharing {
                for &g in sharing {
                    if f != g {
                        neighbors[f as usize].push(g);
                    }
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Adjacency { neighbors }
    }

    /// Serializes as Wavefront OBJ. Coordinates round-trip exactly.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        match &self.uv {
            Some(uv) => {
                for t in uv {
                    for c in t {
                        let _ = writeln!(out, "vt {} {}", c.x, c.y);
                    }
                }
                for (i, f) in self.faces.iter().enumerate() {
                    let t = 3 * i + 1;
                    let _ = writeln!(
                        out,
                        "f {}/{} {}/{} {}/{}",
                        f[0] + 1,
                        t,
                        f[1] + 1,
                        t + 1,
                        f[2] + 1,
                        t + 2
                    );
                }
            }
            None => {
                for f in &self.faces {
                    let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
                }
            }
        }
        out
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

/// Face-to-face adjacency over shared edges, orientation-agnostic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<u32>>,
}

impl Adjacency {
    pub fn neighbors(&self, face: usize) -> &[u32] {
        &self.neighbors[face]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

/// Parses OBJ text. Polygons are fan-triangulated; `vn` records are ignored
/// since normals always come from winding.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut faces = Vec::new();
    let mut corner_uv: Vec<[Option<usize>; 3]> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        match tag {
            "v" => {
                let c = parse_floats(tokens, 3).map_err(err)?;
                positions.push(DVec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = parse_floats(tokens, 2).map_err(err)?;
                texcoords.push(DVec2::new(c[0], c[1]));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let v = parts.next().unwrap_or("");
                    let vt = parts.next().filter(|s| !s.is_empty());
                    let v = resolve_index(v, positions.len()).map_err(&err)?;
                    let vt = vt
                        .map(|s| resolve_index(s, texcoords.len()))
                        .transpose()
                        .map_err(&err)?;
                    corners.push((v, vt));
                }
                if corners.len() < 3 {
                    return Err(err(format!("face with {} vertices", corners.len())));
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    faces.push(tri.map(|c| c.0 as u32));
                    corner_uv.push(tri.map(|c| c.1));
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }

    let all_uv = corner_uv.iter().all(|c| c.iter().all(Option::is_some));
    let any_uv = corner_uv.iter().any(|c| c.iter().any(Option::is_some));
    if any_uv && !all_uv {
        log::warn!("OBJ has texture coordinates on some faces only; ignoring them");
    }
    let uv = all_uv.then(|| {
        corner_uv
            .iter()
            .map(|c| c.map(|t| texcoords[t.unwrap()]))
            .collect()
    });
    Mesh::from_triangles(positions, faces, uv)
}

fn parse_floats<'a>(tokens: impl Iterator<Item = &'a str>, want: usize) -> Result<Vec<f64>, String> {
    let values: Vec<f64> = tokens
        .take(want)
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect::<Result<_, _>>()?;
    if values.len() < want {
        return Err(format!("expected {want} coordinates, found {}", values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(values)
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count`.
fn resolve_index(token: &str, count: usize) -> Result<usize, String> {
    let raw: i64 = token
        .parse()
        .map_err(|_| format!("bad index `{token}`"))?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err("index 0 is not valid in OBJ".into());
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(format!("index {raw} out of range ({count} defined)"));
    }
    Ok(resolved as usize)
}

fn raw_cross(vertices: &[DVec3], f: &[u32; 3]) -> DVec3 {
    let a = vertices[f[0] as usize];
    let b = vertices[f[1] as usize];
    let c = vertices[f[2] as usize];
    (b - a).cross(c - a)
}

fn bounds(points: &[DVec3]) -> Option<(DVec3, DVec3)> {
    let first = *points.first()?;
    Some(
        points
            .iter()
            .fold((first, first), |(lo, hi), &p| (lo.min(p), hi.max(p))),
    )
}
