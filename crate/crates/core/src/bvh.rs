//! Bounding volume hierarchy over mesh triangles, used to collect every
//! intersection along a ray.

use glam::DVec3;

use crate::mesh::Mesh;

const LEAF_SIZE: usize = 4;

/// One node of the flattened tree. Internal nodes have `count == 0`; their
/// left child follows immediately and the right child is at `offset`. Leaves
/// cover `order[offset..offset + count]`.
#[derive(Clone, Debug)]
struct Node {
    min: DVec3,
    max: DVec3,
    offset: u32,
    count: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub face: u32,
    /// Distance along the (unit) ray direction.
    pub t: f64,
}

pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    triangles: Vec<[DVec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Bvh {
        let triangles: Vec<[DVec3; 3]> = (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<DVec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        build_node(&triangles, &centroids, &mut order, 0, &mut nodes);
        Bvh {
            nodes,
            order,
            triangles,
        }
    }

    /// Appends every intersection with `t > t_min` to `out` (unsorted).
    /// Triangles are double-sided and edges inclusive, so a ray through a
    /// shared edge reports both faces.
    pub fn all_hits(&self, origin: DVec3, dir: DVec3, t_min: f64, out: &mut Vec<RayHit>) {
        let inv = dir.recip();
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if !slab_test(node.min, node.max, origin, inv) {
                continue;
            }
            if node.count > 0 {
                let range = node.offset as usize..(node.offset + node.count) as usize;
                for &face in &self.order[range] {
                    if let Some(t) = intersect(&self.triangles[face as usize], origin, dir) {
                        if t > t_min {
                            out.push(RayHit { face, t });
                        }
                    }
                }
            } else {
                stack.push(node.offset as usize);
                stack.push(idx + 1);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn build_node(
    tris: &[[DVec3; 3]],
    centroids: &[DVec3],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut min = DVec3::splat(f64::INFINITY);
    let mut max = DVec3::splat(f64::NEG_INFINITY);
    let mut cmin = min;
    let mut cmax = max;
    for &f in order.iter() {
        for p in &tris[f as usize] {
            min = min.min(*p);
            max = max.max(*p);
        }
        let c = centroids[f as usize];
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    let idx = nodes.len();
    nodes.push(Node {
        min,
        max,
        offset: offset as u32,
        count: order.len() as u32,
    });
    let spread = cmax - cmin;
    if order.len() <= LEAF_SIZE || spread.max_element() <= 0.0 {
        return idx;
    }
    let axis = if spread.x >= spread.y && spread.x >= spread.z {
        0
    } else if spread.y >= spread.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let (ca, cb) = (centroids[a as usize][axis], centroids[b as usize][axis]);
        ca.total_cmp(&cb).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build_node(tris, centroids, left, offset, nodes);
    let right_idx = build_node(tris, centroids, right, offset + mid, nodes);
    nodes[idx].count = 0;
    nodes[idx].offset = right_idx as u32;
    idx
}

fn slab_test(min: DVec3, max: DVec3, origin: DVec3, inv: DVec3) -> bool {
    let t0 = (min - origin) * inv;
    let t1 = (max - origin) * inv;
    // NaN (0 · ∞) on an axis the ray is parallel to and touching: treat as inside.
    let lo = t0.min(t1);
    let hi = t0.max(t1);
    let enter = [lo.x, lo.y, lo.z].into_iter().filter(|v| !v.is_nan()).fold(0.0f64, f64::max);
    let exit = [hi.x, hi.y, hi.z]
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, f64::min);
    enter <= exit * (1.0 + 1e-12)
}

/// Möller–Trumbore, double-sided, inclusive of edges.
fn intersect(tri: &[DVec3; 3], origin: DVec3, dir: DVec3) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(p) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(q) * inv_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn brute(mesh: &Mesh, origin: DVec3, dir: DVec3) -> Vec<RayHit> {
        let mut out: Vec<RayHit> = (0..mesh.face_count())
            .filter_map(|f| {
                intersect(&mesh.triangle(f), origin, dir)
                    .filter(|&t| t > 0.0)
                    .map(|t| RayHit { face: f as u32, t })
            })
            .collect();
        out.sort_by(|a, b| a.face.cmp(&b.face));
        out
    }

    #[test]
    fn matches_exhaustive_search() {
        let mesh = fixtures::nested_spheres(2).merged(&fixtures::torus(10, 6, 0.3, 0.1));
        let bvh = Bvh::build(&mesh);
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut rnd = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..2000 {
            let origin = DVec3::new(rnd(), rnd(), rnd()) * 2.0;
            let target = DVec3::new(rnd(), rnd(), rnd()) * 0.5;
            let dir = (target - origin).normalize();
            let mut hits = Vec::new();
            bvh.all_hits(origin, dir, 0.0, &mut hits);
            hits.sort_by(|a, b| a.face.cmp(&b.face));
            assert_eq!(hits, brute(&mesh, origin, dir));
        }
    }

    #[test]
    fn axis_parallel_rays() {
        let cube = fixtures::cube();
        let bvh = Bvh::build(&cube);
        let mut hits = Vec::new();
        bvh.all_hits(DVec3::new(2.0, 0.1, 0.2), DVec3::NEG_X, 0.0, &mut hits);
        let mut ts: Vec<f64> = hits.iter().map(|h| h.t).collect();
        ts.sort_by(f64::total_cmp);
        assert_eq!(ts, vec![1.5, 2.5]);
    }
}
