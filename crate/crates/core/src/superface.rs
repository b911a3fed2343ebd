//! Superfaces: edge-connected, low-curvature face clusters that receive a
//! single hit level.

use std::collections::VecDeque;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::mesh::{Adjacency, Mesh};

pub const DEFAULT_NORMAL_ANGLE_DEG: f64 = 45.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperfaceSet {
    /// Superface id of every face; ids are contiguous from 0.
    pub assignment: Vec<u32>,
    pub count: usize,
}

impl SuperfaceSet {
    /// Member faces of every superface, ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.count];
        for (f, &s) in self.assignment.iter().enumerate() {
            out[s as usize].push(f as u32);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.count];
        for &s in &self.assignment {
            out[s as usize] += 1;
        }
        out
    }

    /// One superface per face.
    pub fn singletons(face_count: usize) -> SuperfaceSet {
        SuperfaceSet {
            assignment: (0..face_count as u32).collect(),
            count: face_count,
        }
    }
}

/// Greedy region growing. The lowest-index unassigned face seeds a region;
/// breadth-first search then admits an edge neighbour iff its normal is within
/// `threshold_deg` of the seed's normal. Neighbours are visited in ascending
/// index order, so the result depends only on face order.
pub fn segment_superfaces(mesh: &Mesh, adjacency: &Adjacency, threshold_deg: f64) -> SuperfaceSet {
    const UNASSIGNED: u32 = u32::MAX;
    let min_dot = threshold_deg.to_radians().cos() - 1e-12;
    let normals = mesh.face_normals();
    let mut assignment = vec![UNASSIGNED; mesh.face_count()];
    let mut queue = VecDeque::new();
    let mut count = 0u32;

    for seed in 0..mesh.face_count() {
        if assignment[seed] != UNASSIGNED {
            continue;
        }
        let seed_normal = normals[seed];
        assignment[seed] = count;
        queue.push_back(seed);
        while let Some(f) = queue.pop_front() {
            for &g in adjacency.neighbors(f) {
                let g = g as usize;
                if assignment[g] == UNASSIGNED && normals[g].dot(seed_normal) >= min_dot {
                    assignment[g] = count;
                    queue.push_back(g);
                }
            }
        }
        count += 1;
    }
    SuperfaceSet {
        assignment,
        count: count as usize,
    }
}

/// Per-superface statistics written to `superfaces.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperfaceStats {
    pub id: u32,
    pub face_count: usize,
    pub area: f64,
    /// Area-weighted mean normal, unit length (zero if it cancels out).
    pub mean_normal: DVec3,
}

pub fn superface_stats(mesh: &Mesh, set: &SuperfaceSet) -> Vec<SuperfaceStats> {
    set.members()
        .into_iter()
        .enumerate()
        .map(|(id, faces)| {
            let mut area = 0.0;
            let mut normal = DVec3::ZERO;
            for &f in &faces {
                let a = mesh.face_area(f as usize);
                area += a;
                normal += mesh.normal(f as usize) * a;
            }
            SuperfaceStats {
                id: id as u32,
                face_count: faces.len(),
                area,
                mean_normal: normal.normalize_or_zero(),
            }
        })
        .collect()
}
