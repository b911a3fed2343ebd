mod common;

use glam::DVec3;
use layertex::atlas::generate_uv_atlas;
use layertex::camera::build_camera_rig;
use layertex::fixtures;
use layertex::hitlevel::{assign_superface_levels, compute_weight_table};
use layertex::mesh::Mesh;
use layertex::superface::segment_superfaces;
use layertex::uvblend::{build_texel_map, rasterize_level_weights};
use layertex::visibility::{build_level_sets, render_faces, render_level_view, LevelSets, ViewBuffers, NO_FACE};

use common::{brute_point_visible, brute_visible_face};

fn decompose(mesh: &Mesh) -> LevelSets {
    let rig = build_camera_rig(4.0, 30.0, 128).unwrap();
    let table = compute_weight_table(mesh, &rig, 128);
    let set = segment_superfaces(mesh, &mesh.build_topology(), 45.0);
    build_level_sets(&assign_superface_levels(&set, &table, 4))
}

#[test]
fn level_two_render_matches_flipped_ray_cast() {
    let mesh = fixtures::nested_spheres(2);
    let sets = decompose(&mesh);
    assert_eq!(sets.layer_count(), 2);
    let outer = mesh.face_count() / 2;
    let rig = build_camera_rig(4.0, 30.0, 64).unwrap();
    for v in [0, 5, 11, 16] {
        let view = &rig.views[v];
        let buf = render_level_view(&mesh, &sets, 2, view);
        let frame = view.frame();
        let mut mismatched = 0;
        let mut inner = 0;
        let mut outer_far = 0;
        for y in 0..64 {
            for x in 0..64 {
                let d = frame.pixel_ray(x, y);
                let oracle = brute_visible_face(&mesh, frame.origin, d, |_| true, |f| sets.is_flipped(2, f));
                let got = buf.face_at(x, y);
                match (oracle, got) {
                    (Some((f, t)), Some(g)) => {
                        let depth = buf.depth[(y * 64 + x) as usize];
                        if f != g && (t - depth).abs() > 1e-9 {
                            mismatched += 1;
                        }
                        if (g as usize) < outer {
                            outer_far += 1;
                        } else {
                            inner += 1;
                        }
                    }
                    (None, None) => {}
                    _ => mismatched += 1,
                }
            }
        }
        // The inner sphere shows through the culled near side; the flipped
        // far side of the outer sphere frames it.
        assert!(inner > 0 && outer_far > 0, "view {v}: inner {inner}, outer {outer_far}");
        assert!(mismatched <= 4, "view {v}: {mismatched} pixels differ from the oracle");
    }
}

#[test]
fn init_only_render_matches_plain_ray_cast() {
    let mesh = fixtures::open_box(2);
    let rig = build_camera_rig(4.0, 30.0, 48).unwrap();
    let view = &rig.views[9];
    let frame = view.frame();
    let buf: ViewBuffers = render_faces(&mesh, view, |_| true, |_| false);
    let mut mismatched = 0;
    for y in 0..48 {
        for x in 0..48 {
            let oracle = brute_visible_face(&mesh, frame.origin, frame.pixel_ray(x, y), |_| true, |_| false);
            if oracle.map(|o| o.0) != buf.face_at(x, y) {
                let same_depth = oracle
                    .zip(buf.face_at(x, y))
                    .is_some_and(|((_, t), _)| (t - buf.depth[(y * 48 + x) as usize]).abs() < 1e-9);
                if !same_depth {
                    mismatched += 1;
                }
            }
        }
    }
    assert!(mismatched <= 3, "{mismatched} pixels differ");
}

#[test]
fn enclosed_texels_match_visibility_oracle() {
    // Closed box with a sealed cube inside.
    let mesh = fixtures::box_mesh(DVec3::splat(-0.5), DVec3::splat(0.5), 2)
        .merged(&fixtures::box_mesh(DVec3::splat(-0.1), DVec3::splat(0.1), 1));
    let set = segment_superfaces(&mesh, &mesh.build_topology(), 30.0);
    let mesh = mesh.clone().with_uv(generate_uv_atlas(&mesh, &set, 128, 4).unwrap().uv);
    let sets = decompose(&mesh);
    // Outer box at 1, the sealed cube behind it at 2, the unseen bottom at H_max.
    assert_eq!(sets.layer_count(), 3);
    let rig = build_camera_rig(3.0, 40.0, 96).unwrap();
    let texels = build_texel_map(&mesh, 128, 0);
    let buffers: Vec<ViewBuffers> = rig.views.iter().map(|v| render_level_view(&mesh, &sets, 1, v)).collect();
    let (w, m) = rasterize_level_weights(&mesh, &sets, 1, &rig, &buffers, &texels);
    let inner_start = 6 * 8;
    let mut compared = 0;
    let mut disagree = 0;
    for t in 0..texels.len() {
        let f = texels.face[t];
        if f == NO_FACE || !sets.in_residual(1, f as usize) {
            continue;
        }
        let p = texels.point[t];
        let oracle_w: f64 = rig
            .views
            .iter()
            .filter(|v| brute_point_visible(&mesh, f as usize, p, v.position, |g| sets.is_flipped(1, g)))
            .map(|v| mesh.normal(f as usize).dot((p - v.position).normalize()).abs())
            .sum();
        if f as usize >= inner_start {
            assert_eq!(w[t], 0.0);
            assert!(!m[t]);
            assert_eq!(oracle_w, 0.0);
        }
        compared += 1;
        if (w[t] as f64 - oracle_w).abs() > 1e-5 {
            disagree += 1;
        }
    }
    assert!(compared > 1000);
    assert_eq!(disagree, 0, "{disagree} of {compared} texels differ from the oracle");
}
