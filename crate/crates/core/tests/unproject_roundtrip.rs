mod common;

use glam::DVec3;
use image::{Rgb, RgbImage};
use layertex::atlas::generate_uv_atlas;
use layertex::bvh::Bvh;
use layertex::camera::build_camera_rig;
use layertex::fixtures;
use layertex::hitlevel::HitLevelAssignment;
use layertex::mesh::Mesh;
use layertex::superface::{segment_superfaces, SuperfaceSet};
use layertex::uvblend::{build_layer, build_texel_map, render_texture_to_view, UvLayer};
use layertex::visibility::{build_level_sets, render_level_view, LevelSets};

fn textured_sphere() -> (Mesh, SuperfaceSet, LevelSets) {
    let sphere = fixtures::icosphere(3, 0.5, DVec3::ZERO);
    let set = segment_superfaces(&sphere, &sphere.build_topology(), 45.0);
    let mesh = sphere.clone().with_uv(generate_uv_atlas(&sphere, &set, 256, 4).unwrap().uv);
    let sets = build_level_sets(&HitLevelAssignment {
        h_max: 4,
        superface_level: vec![1; set.count],
        face_level: vec![1; mesh.face_count()],
        histograms: Vec::new(),
        face_superface_disagreements: 0,
    });
    (mesh, set, sets)
}

fn round_trip(mesh: &Mesh, sets: &LevelSets, texture: &RgbImage, charts: Option<&[u32]>) -> UvLayer {
    let rig = build_camera_rig(4.0, 30.0, 384).unwrap();
    let images: Vec<RgbImage> = rig
        .views
        .iter()
        .map(|v| render_texture_to_view(mesh, v, &render_level_view(mesh, sets, 1, v), texture))
        .collect();
    let texels = build_texel_map(mesh, texture.width(), 0);
    build_layer(mesh, &Bvh::build(mesh), sets, 1, &rig, &images, &texels, charts).unwrap()
}

#[test]
fn constant_texture_survives_silhouettes_exactly() {
    // Texels seen only at grazing angles sit next to background pixels;
    // none of the black may leak in.
    let (mesh, set, sets) = textured_sphere();
    let texture = RgbImage::from_pixel(256, 256, Rgb([200, 120, 40]));
    for charts in [None, Some(set.assignment.as_slice())] {
        let layer = round_trip(&mesh, &sets, &texture, charts);
        assert!(layer.masked_count() > 10_000);
        for t in 0..layer.weight.len() {
            if layer.mask(t) {
                let c = layer.color[t].map(|c| c * 255.0);
                assert!((c[0] - 200.0).abs() < 1e-3 && (c[1] - 120.0).abs() < 1e-3 && (c[2] - 40.0).abs() < 1e-3);
            }
        }
    }
}

#[test]
fn chart_aware_sampling_reduces_seam_error() {
    let (mesh, set, sets) = textured_sphere();
    let texture = RgbImage::from_fn(256, 256, |x, y| {
        if (x / 32 + y / 32) % 2 == 0 {
            Rgb([230, 40, 40])
        } else {
            Rgb([30, 60, 220])
        }
    });
    let texels = build_texel_map(&mesh, 256, 0);
    let score = |layer: &UvLayer| {
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for t in 0..layer.weight.len() {
            if texels.core[t] && layer.mask(t) {
                let p = texture.get_pixel(t as u32 % 256, t as u32 / 256);
                want.push([p[0] as f64, p[1] as f64, p[2] as f64]);
                got.push(layer.color[t].map(|c| c as f64 * 255.0));
            }
        }
        common::psnr(&got, &want)
    };
    let plain = score(&round_trip(&mesh, &sets, &texture, None));
    let aware = score(&round_trip(&mesh, &sets, &texture, Some(&set.assignment)));
    assert!(aware > plain, "chart-aware {aware:.2} dB vs plain {plain:.2} dB");
}
