//! Stage orchestration over a working directory.
//!
//! Every stage reads its inputs from and writes its outputs to the working
//! directory, so stages can run separately and be resumed. `state.json`
//! records a content hash of each stage's inputs and outputs; a stage whose
//! inputs are unchanged and whose outputs are intact is skipped.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::atlas::{generate_uv_atlas, DEFAULT_GUTTER_PX};
use crate::bvh::Bvh;
use crate::camera::{build_camera_rig, CameraRig};
use crate::error::{Error, Result};
use crate::hitlevel::{assign_superface_levels, compute_weight_table, HitLevelAssignment, WeightTable};
use crate::mesh::{load_mesh, Mesh};
use crate::provider::{
    depth_image_name, load_directory_textures, procedural_generate_views, view_image_name, ManifestLevel,
    ManifestView, Palette, RenderManifest, MANIFEST_SCHEMA,
};
use crate::superface::{segment_superfaces, SuperfaceSet};
use crate::uvblend::{blend_levels, build_layer, build_texel_map, coverage, UvLayer, DILATION_TEXELS};
use crate::visibility::{build_level_sets, render_level_view, write_depth_png, LevelSets};

/// Where view images come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderSpec {
    Procedural,
    Directory(PathBuf),
}

impl std::str::FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procedural" => Ok(ProviderSpec::Procedural),
            _ => match s.strip_prefix("dir:") {
                Some(path) if !path.is_empty() => Ok(ProviderSpec::Directory(path.into())),
                _ => Err(Error::Validation(format!(
                    "provider must be `procedural` or `dir:<path>`, got `{s}`"
                ))),
            },
        }
    }
}

impl std::fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderSpec::Procedural => f.write_str("procedural"),
            ProviderSpec::Directory(p) => write!(f, "dir:{}", p.display()),
        }
    }
}

impl Serialize for ProviderSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ProviderSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ray_resolution: u32,
    pub view_resolution: u32,
    pub uv_resolution: u32,
    pub h_max: u32,
    pub normal_angle_threshold_deg: f64,
    pub camera_distance: f64,
    pub fov_deg: f64,
    pub tau: f64,
    pub seed: u64,
    pub gutter_px: u32,
    /// Texel colour where no layer has content.
    pub background: [u8; 3],
    /// Prompt per hit level; levels without one get an empty prompt.
    pub prompts: BTreeMap<u32, String>,
    pub provider: ProviderSpec,
    /// Patterns for the procedural provider.
    pub palette: Palette,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ray_resolution: 1536,
            view_resolution: 768,
            uv_resolution: 1024,
            h_max: 4,
            normal_angle_threshold_deg: 45.0,
            camera_distance: 4.0,
            fov_deg: 30.0,
            tau: 1.0,
            seed: 0,
            gutter_px: DEFAULT_GUTTER_PX,
            background: [0, 0, 0],
            prompts: BTreeMap::new(),
            provider: ProviderSpec::Procedural,
            palette: Palette::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        for (name, v) in [
            ("ray_resolution", self.ray_resolution),
            ("view_resolution", self.view_resolution),
            ("uv_resolution", self.uv_resolution),
        ] {
            if v < 64 {
                return fail(format!("{name} must be at least 64, got {v}"));
            }
        }
        if !(1..=8).contains(&self.h_max) {
            return fail(format!("h_max must be in 1..=8, got {}", self.h_max));
        }
        if !(0.0..=180.0).contains(&self.normal_angle_threshold_deg) {
            return fail(format!(
                "normal_angle_threshold_deg must be in [0, 180], got {}",
                self.normal_angle_threshold_deg
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return fail(format!("fov_deg must be in (0, 180), got {}", self.fov_deg));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        build_camera_rig(self.camera_distance, self.fov_deg, 64)
            .map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn rig(&self, resolution: u32) -> Result<CameraRig> {
        build_camera_rig(self.camera_distance, self.fov_deg, resolution)
    }
}

/// Stage numbers and names, in execution order.
pub const STAGES: [(u8, &str); 9] = [
    (1, "load"),
    (2, "superfaces"),
    (3, "weights"),
    (4, "levels"),
    (5, "levelsets"),
    (6, "render"),
    (7, "provider"),
    (8, "unproject"),
    (9, "blend"),
];

pub const ALL_STAGES: RangeInclusive<u8> = 1..=9;
pub const DECOMPOSE_STAGES: RangeInclusive<u8> = 1..=5;
pub const RENDER_STAGES: RangeInclusive<u8> = 6..=6;
pub const BLEND_STAGES: RangeInclusive<u8> = 7..=9;

pub const NORMALIZED_MESH: &str = "normalized.obj";
pub const MESH: &str = "mesh.obj";
pub const SUPERFACES: &str = "superfaces.json";
pub const WEIGHTS: &str = "weights.json";
pub const HIT_LEVELS: &str = "hitlevels.json";
pub const LEVEL_SETS: &str = "levelsets.json";
pub const MANIFEST: &str = "manifest.json";
pub const FINAL: &str = "final.png";
pub const REPORT: &str = "report.json";
pub const STATE: &str = "state.json";

pub fn texture_name(level: u32) -> String {
    format!("texture_L{level}.png")
}

pub fn weights_name(level: u32) -> String {
    format!("weights_L{level}.pgm")
}

pub fn layer_name(level: u32) -> String {
    format!("layer_L{level}.bin")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
    pub report: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct State {
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub skipped: bool,
    pub seconds: f64,
    pub details: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub stages: Vec<StageReport>,
}

impl Report {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn load(workdir: &Path) -> Result<Report> {
        let path = workdir.join(REPORT);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    /// The report without timings, for comparing runs.
    pub fn counts(&self) -> Vec<(String, Value)> {
        self.stages.iter().map(|s| (s.stage.clone(), s.details.clone())).collect()
    }
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    mesh_source: Option<&'a Path>,
    workdir: &'a Path,
    state: State,
    hashes: HashMap<PathBuf, String>,
}

struct StageOutput {
    files: Vec<PathBuf>,
    details: Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Ctx<'_> {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.workdir.join(rel)
    }

    fn file_hash(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.hashes.get(path) {
            return Ok(h.clone());
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let h = sha256_hex(&bytes);
        self.hashes.insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    fn input_hash(&mut self, stage: &str, config: &Value, inputs: &[PathBuf]) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(stage.as_bytes());
        hasher.update(config.to_string().as_bytes());
        for p in inputs {
            let h = self.file_hash(p)?;
            hasher.update(p.to_string_lossy().as_bytes());
            hasher.update(h.as_bytes());
        }
        Ok(hex::encode(hasher.finalize()))
    }

    fn outputs_intact(&mut self, record: &StageRecord) -> bool {
        record.outputs.iter().all(|(rel, hash)| {
            let p = self.path(rel);
            p.is_file() && self.file_hash(&p).is_ok_and(|h| &h == hash)
        })
    }

    /// Runs `body` unless the recorded inputs and outputs still match.
    fn stage(
        &mut self,
        name: &'static str,
        config: Value,
        inputs: Vec<PathBuf>,
        primary: &str,
        body: impl FnOnce(&mut Self) -> Result<StageOutput>,
    ) -> Result<StageReport> {
        let wrap = |e: Error, path: PathBuf| Error::Stage {
            stage: name,
            path,
            source: Box::new(e),
        };
        let start = Instant::now();
        let input_hash = self.input_hash(name, &config, &inputs).map_err(|e| wrap(e, self.path(primary)))?;
        if let Some(record) = self.state.stages.get(name).cloned() {
            if record.input_hash == input_hash && self.outputs_intact(&record) {
                log::info!("stage {name}: up to date");
                return Ok(StageReport {
                    stage: name.into(),
                    skipped: true,
                    seconds: start.elapsed().as_secs_f64(),
                    details: record.report,
                });
            }
        }
        log::info!("stage {name}: running");
        // Invalidate before running so a failure cannot leave a stale record.
        self.state.stages.remove(name);
        self.save_state().map_err(|e| wrap(e, self.path(STATE)))?;
        let out = body(self).map_err(|e| wrap(e, self.path(primary)))?;
        let mut outputs = BTreeMap::new();
        for file in &out.files {
            let abs = self.path(file);
            self.hashes.remove(&abs);
            let h = self.file_hash(&abs).map_err(|e| wrap(e, abs.clone()))?;
            outputs.insert(file.to_string_lossy().into_owned(), h);
        }
        self.state.stages.insert(
            name.into(),
            StageRecord {
                input_hash,
                outputs,
                report: out.details.clone(),
            },
        );
        self.save_state().map_err(|e| wrap(e, self.path(STATE)))?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("stage {name}: done in {seconds:.2} s");
        Ok(StageReport {
            stage: name.into(),
            skipped: false,
            seconds,
            details: out.details,
        })
    }

    fn save_state(&self) -> Result<()> {
        write_json(&self.path(STATE), &self.state)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        write_json(&self.path(rel), value)?;
        Ok(PathBuf::from(rel))
    }

    fn manifest_inputs(&self) -> Result<(RenderManifest, Vec<PathBuf>)> {
        let manifest = RenderManifest::load(&self.path(MANIFEST))?;
        let mut inputs = vec![self.path(MANIFEST)];
        for level in &manifest.levels {
            inputs.extend(level.views.iter().map(|v| self.path(&v.depth)));
        }
        Ok((manifest, inputs))
    }

    fn views_dir(&self) -> PathBuf {
        match &self.config.provider {
            ProviderSpec::Procedural => self.path("views"),
            ProviderSpec::Directory(dir) => dir.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs every stage. `mesh` is the source OBJ.
pub fn run_pipeline(config: &PipelineConfig, mesh: &Path, workdir: &Path) -> Result<Report> {
    run_stages(config, Some(mesh), workdir, ALL_STAGES)
}

/// Runs the stages in `range`; earlier stages must have completed in
/// `workdir` already. The source mesh is only needed for stage 1.
pub fn run_stages(
    config: &PipelineConfig,
    mesh: Option<&Path>,
    workdir: &Path,
    range: RangeInclusive<u8>,
) -> Result<Report> {
    config.validate()?;
    if range.contains(&1) && mesh.is_none() {
        return Err(Error::Validation("the load stage needs a source mesh".into()));
    }
    fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let state = match fs::read_to_string(workdir.join(STATE)) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
            log::warn!("ignoring unreadable {STATE}: {e}");
            State::default()
        }),
        Err(_) => State::default(),
    };
    let mut ctx = Ctx {
        config,
        mesh_source: mesh,
        workdir,
        state,
        hashes: HashMap::new(),
    };
    let mut report = Report::load(workdir).unwrap_or_default();
    for (number, name) in STAGES {
        if !range.contains(&number) {
            continue;
        }
        let entry = match number {
            1 => stage_load(&mut ctx),
            2 => stage_superfaces(&mut ctx),
            3 => stage_weights(&mut ctx),
            4 => stage_levels(&mut ctx),
            5 => stage_levelsets(&mut ctx),
            6 => stage_render(&mut ctx),
            7 => stage_provider(&mut ctx),
            8 => stage_unproject(&mut ctx),
            _ => stage_blend(&mut ctx),
        };
        let entry = entry?;
        debug_assert_eq!(entry.stage, name);
        match report.stages.iter_mut().find(|s| s.stage == name) {
            Some(slot) => *slot = entry,
            None => report.stages.push(entry),
        }
        report
            .stages
            .sort_by_key(|s| STAGES.iter().position(|(_, n)| *n == s.stage));
        write_json(&workdir.join(REPORT), &report)?;
    }
    Ok(report)
}

fn stage_load(ctx: &mut Ctx) -> Result<StageReport> {
    let source = ctx.mesh_source.expect("checked by run_stages").to_path_buf();
    ctx.stage("load", Value::Null, vec![source.clone()], NORMALIZED_MESH, |ctx| {
        let mesh = load_mesh(&source)?;
        let normalized = mesh.normalize_unit_box()?;
        normalized.write_obj(&ctx.path(NORMALIZED_MESH))?;
        Ok(StageOutput {
            files: vec![NORMALIZED_MESH.into()],
            details: json!({
                "faces": normalized.face_count(),
                "vertices": normalized.vertices().len(),
                "dropped_degenerate": mesh.dropped_faces(),
                "has_uv": normalized.uv().is_some(),
            }),
        })
    })
}

fn stage_superfaces(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let config = json!({
        "threshold": c.normal_angle_threshold_deg,
        "uv_resolution": c.uv_resolution,
        "gutter_px": c.gutter_px,
    });
    let inputs = vec![ctx.path(NORMALIZED_MESH)];
    ctx.stage("superfaces", config, inputs, SUPERFACES, |ctx| {
        let mesh = load_mesh(&ctx.path(NORMALIZED_MESH))?;
        let set = segment_superfaces(&mesh, &mesh.build_topology(), c.normal_angle_threshold_deg);
        let had_uv = mesh.uv().is_some();
        let mesh = if had_uv {
            mesh
        } else {
            let atlas = generate_uv_atlas(&mesh, &set, c.uv_resolution, c.gutter_px)?;
            mesh.with_uv(atlas.uv)
        };
        mesh.write_obj(&ctx.path(MESH))?;
        let files = vec![ctx.write_json(SUPERFACES, &set)?, MESH.into()];
        let largest = set.sizes().into_iter().max().unwrap_or(0);
        Ok(StageOutput {
            files,
            details: json!({
                "superfaces": set.count,
                "largest_superface": largest,
                "atlas_generated": !had_uv,
            }),
        })
    })
}

fn stage_weights(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let config = json!({
        "ray_resolution": c.ray_resolution,
        "distance": c.camera_distance,
        "fov": c.fov_deg,
    });
    let inputs = vec![ctx.path(MESH)];
    ctx.stage("weights", config, inputs, WEIGHTS, |ctx| {
        let mesh = load_mesh(&ctx.path(MESH))?;
        let rig = c.rig(c.ray_resolution)?;
        let table = compute_weight_table(&mesh, &rig, c.ray_resolution);
        let files = vec![ctx.write_json(WEIGHTS, &table)?];
        Ok(StageOutput {
            files,
            details: json!({
                "views": rig.len(),
                "rays": rig.len() as u64 * u64::from(c.ray_resolution).pow(2),
                "max_order": table.max_order(),
                "entries": table.entries().count(),
            }),
        })
    })
}

fn stage_levels(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let inputs = vec![ctx.path(SUPERFACES), ctx.path(WEIGHTS)];
    ctx.stage("levels", json!({ "h_max": c.h_max }), inputs, HIT_LEVELS, |ctx| {
        let set: SuperfaceSet = ctx.read_json(SUPERFACES)?;
        let table: WeightTable = ctx.read_json(WEIGHTS)?;
        let assignment = assign_superface_levels(&set, &table, c.h_max);
        let files = vec![ctx.write_json(HIT_LEVELS, &assignment)?];
        let mut per_level = BTreeMap::new();
        for &l in &assignment.superface_level {
            *per_level.entry(l).or_insert(0usize) += 1;
        }
        Ok(StageOutput {
            files,
            details: json!({
                "superfaces_per_level": per_level,
                "face_superface_disagreements": assignment.face_superface_disagreements,
            }),
        })
    })
}

fn stage_levelsets(ctx: &mut Ctx) -> Result<StageReport> {
    let inputs = vec![ctx.path(HIT_LEVELS)];
    ctx.stage("levelsets", Value::Null, inputs, LEVEL_SETS, |ctx| {
        let assignment: HitLevelAssignment = ctx.read_json(HIT_LEVELS)?;
        let sets = build_level_sets(&assignment);
        let files = vec![ctx.write_json(LEVEL_SETS, &sets)?];
        let levels: Vec<Value> = (1..=sets.layer_count())
            .map(|k| {
                json!({
                    "level": sets.hit_level(k),
                    "init_faces": sets.init(k).len(),
                    "residual_faces": sets.residual(k).len(),
                })
            })
            .collect();
        Ok(StageOutput {
            files,
            details: json!({ "layers": sets.layer_count(), "levels": levels }),
        })
    })
}

/// Writes the render manifest for `sets` and returns it. Depth maps are
/// referenced at `depth/depth_L{level}_V{view:02}.png`.
pub fn write_manifest(
    workdir: &Path,
    config: &PipelineConfig,
    rig: &CameraRig,
    sets: &LevelSets,
) -> Result<RenderManifest> {
    let view = rig
        .views
        .first()
        .ok_or_else(|| Error::Validation("empty camera rig".into()))?;
    let levels = (1..=sets.layer_count())
        .map(|k| {
            let level = sets.hit_level(k);
            ManifestLevel {
                level,
                prompt: config.prompts.get(&level).cloned().unwrap_or_default(),
                views: rig
                    .views
                    .iter()
                    .enumerate()
                    .map(|(v, camera)| ManifestView {
                        view: v,
                        depth: PathBuf::from("depth").join(depth_image_name(level, v)),
                        camera: camera.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    let manifest = RenderManifest {
        schema: MANIFEST_SCHEMA,
        mesh: MESH.into(),
        view_resolution: view.resolution,
        uv_resolution: config.uv_resolution,
        near: view.near,
        far: view.far,
        levels,
    };
    manifest.validate()?;
    manifest.save(&workdir.join(MANIFEST))?;
    Ok(manifest)
}

fn stage_render(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let config = json!({
        "view_resolution": c.view_resolution,
        "distance": c.camera_distance,
        "fov": c.fov_deg,
        "uv_resolution": c.uv_resolution,
        "prompts": c.prompts,
    });
    let inputs = vec![ctx.path(MESH), ctx.path(LEVEL_SETS)];
    ctx.stage("render", config, inputs, MANIFEST, |ctx| {
        let mesh = load_mesh(&ctx.path(MESH))?;
        let sets: LevelSets = ctx.read_json(LEVEL_SETS)?;
        let rig = c.rig(c.view_resolution)?;
        let depth_dir = ctx.path("depth");
        fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
        let manifest = write_manifest(ctx.workdir, c, &rig, &sets)?;
        let mut files = vec![PathBuf::from(MANIFEST)];
        let mut coverage = Vec::new();
        for (k, level) in manifest.levels.iter().enumerate() {
            let mut pixels = Vec::new();
            for (view, entry) in rig.views.iter().zip(&level.views) {
                let buffers = render_level_view(&mesh, &sets, k + 1, view);
                write_depth_png(&buffers, view.near, view.far, &ctx.path(&entry.depth))?;
                pixels.push(buffers.covered_pixels());
                files.push(entry.depth.clone());
            }
            coverage.push(json!({ "level": level.level, "covered_pixels": pixels }));
        }
        Ok(StageOutput {
            files,
            details: json!({ "depth_maps": manifest.entry_count(), "levels": coverage }),
        })
    })
}

fn stage_provider(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let (manifest, mut inputs) = ctx.manifest_inputs().map_err(|e| Error::Stage {
        stage: "provider",
        path: ctx.path(MANIFEST),
        source: Box::new(e),
    })?;
    let config = match &c.provider {
        ProviderSpec::Procedural => json!({ "provider": "procedural", "seed": c.seed, "palette": c.palette }),
        ProviderSpec::Directory(dir) => {
            // External images are inputs; a missing one is reported by the stage.
            for level in &manifest.levels {
                for v in 0..level.views.len() {
                    let p = dir.join(view_image_name(level.level, v));
                    if p.is_file() {
                        inputs.push(p);
                    }
                }
            }
            json!({ "provider": c.provider.to_string() })
        }
    };
    ctx.stage("provider", config, inputs, "views", |ctx| {
        let output = match &c.provider {
            ProviderSpec::Procedural => {
                let out = procedural_generate_views(&manifest, ctx.workdir, c.seed, &c.palette)?;
                out.write_dir(&ctx.views_dir())?;
                out
            }
            ProviderSpec::Directory(dir) => load_directory_textures(dir, &manifest)?,
        };
        let files = match &c.provider {
            ProviderSpec::Procedural => manifest
                .levels
                .iter()
                .flat_map(|l| (0..l.views.len()).map(move |v| PathBuf::from("views").join(view_image_name(l.level, v))))
                .collect(),
            ProviderSpec::Directory(_) => Vec::new(),
        };
        Ok(StageOutput {
            files,
            details: json!({
                "provider": c.provider.to_string(),
                "images": output.images.iter().map(Vec::len).sum::<usize>(),
            }),
        })
    })
}

fn load_view_images(dir: &Path, manifest: &RenderManifest) -> Result<Vec<Vec<RgbImage>>> {
    Ok(load_directory_textures(dir, manifest)?.images)
}

fn stage_unproject(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let manifest = RenderManifest::load(&ctx.path(MANIFEST)).map_err(|e| Error::Stage {
        stage: "unproject",
        path: ctx.path(MANIFEST),
        source: Box::new(e),
    })?;
    let views_dir = ctx.views_dir();
    let mut inputs = vec![ctx.path(MESH), ctx.path(SUPERFACES), ctx.path(LEVEL_SETS), ctx.path(MANIFEST)];
    for level in &manifest.levels {
        for v in 0..level.views.len() {
            let p = views_dir.join(view_image_name(level.level, v));
            if p.is_file() {
                inputs.push(p);
            }
        }
    }
    let config = json!({ "uv_resolution": c.uv_resolution });
    let first_layer = manifest.levels.first().map_or(1, |l| l.level);
    ctx.stage("unproject", config, inputs, &layer_name(first_layer), |ctx| {
        let mesh = load_mesh(&ctx.path(MESH))?;
        let sets: LevelSets = ctx.read_json(LEVEL_SETS)?;
        let charts: SuperfaceSet = ctx.read_json(SUPERFACES)?;
        if sets.layer_count() != manifest.levels.len()
            || sets.face_count() != mesh.face_count()
            || charts.assignment.len() != mesh.face_count()
        {
            return Err(Error::Validation("manifest, level sets and mesh disagree".into()));
        }
        let images = load_view_images(&views_dir, &manifest)?;
        let rig = CameraRig {
            views: manifest.levels[0].views.iter().map(|v| v.camera.clone()).collect(),
        };
        let texels = build_texel_map(&mesh, c.uv_resolution, DILATION_TEXELS);
        let bvh = Bvh::build(&mesh);
        let mut files = Vec::new();
        let mut levels = Vec::new();
        for (k, level) in manifest.levels.iter().enumerate() {
            let layer = build_layer(&mesh, &bvh, &sets, k + 1, &rig, &images[k], &texels, Some(&charts.assignment))?;
            let id = level.level;
            layer.write_raw(&ctx.path(layer_name(id)))?;
            let tex = ctx.path(texture_name(id));
            layer.to_image(c.background).save(&tex).map_err(|e| Error::image(&tex, e))?;
            layer.write_weight_pgm(rig.len() as f64, &ctx.path(weights_name(id)))?;
            files.extend([layer_name(id), texture_name(id), weights_name(id)].map(PathBuf::from));
            levels.push(json!({ "level": id, "masked_texels": layer.masked_count() }));
        }
        Ok(StageOutput {
            files,
            details: json!({ "occupied_texels": texels.occupied(), "levels": levels }),
        })
    })
}

fn stage_blend(ctx: &mut Ctx) -> Result<StageReport> {
    let c = ctx.config;
    let manifest = RenderManifest::load(&ctx.path(MANIFEST)).map_err(|e| Error::Stage {
        stage: "blend",
        path: ctx.path(MANIFEST),
        source: Box::new(e),
    })?;
    let mut inputs = vec![ctx.path(MESH)];
    inputs.extend(manifest.levels.iter().map(|l| ctx.path(layer_name(l.level))));
    let config = json!({ "tau": c.tau, "background": c.background, "uv_resolution": c.uv_resolution });
    ctx.stage("blend", config, inputs, FINAL, |ctx| {
        let layers = manifest
            .levels
            .iter()
            .map(|l| UvLayer::read_raw(&ctx.path(layer_name(l.level))))
            .collect::<Result<Vec<_>>>()?;
        let mesh = load_mesh(&ctx.path(MESH))?;
        let texels = build_texel_map(&mesh, c.uv_resolution, DILATION_TEXELS);
        let blended = match blend_levels(&layers, c.tau) {
            Err(Error::NoCoverage { .. }) => {
                return Err(Error::NoCoverage {
                    occupied: texels.occupied(),
                })
            }
            other => other?,
        };
        let cov = coverage(&blended, &texels);
        let path = ctx.path(FINAL);
        blended.to_image(c.background).save(&path).map_err(|e| Error::image(&path, e))?;
        let single_cover = (0..blended.masked.len())
            .filter(|&t| layers.iter().filter(|l| l.mask(t)).count() == 1)
            .count();
        Ok(StageOutput {
            files: vec![FINAL.into()],
            details: json!({
                "coverage": cov,
                "masked_texels": blended.masked_count(),
                "single_cover_texels": single_cover,
                "layers": layers.len(),
            }),
        })
    })
}

/// Per-level table for the `stats` command: faces, superfaces, masked texels.
pub fn stats_table(workdir: &Path) -> Result<String> {
    let read = |name: &str| -> Result<String> {
        let p = workdir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let parse = |name: &str, text: String| -> Result<Value> {
        serde_json::from_str(&text).map_err(|e| Error::json(workdir.join(name), e))
    };
    let sets: LevelSets =
        serde_json::from_str(&read(LEVEL_SETS)?).map_err(|e| Error::json(workdir.join(LEVEL_SETS), e))?;
    let assignment: HitLevelAssignment =
        serde_json::from_str(&read(HIT_LEVELS)?).map_err(|e| Error::json(workdir.join(HIT_LEVELS), e))?;
    let report = read(REPORT).ok().map(|t| parse(REPORT, t)).transpose()?;
    let masked = |level: u32| -> Option<u64> {
        let stages = report.as_ref()?.get("stages")?.as_array()?;
        let unproject = stages.iter().find(|s| s["stage"] == "unproject")?;
        unproject["details"]["levels"]
            .as_array()?
            .iter()
            .find(|l| l["level"] == level)?["masked_texels"]
            .as_u64()
    };

    let mut out = format!(
        "{:>5} {:>10} {:>12} {:>14} {:>14}\n",
        "level", "superfaces", "init faces", "residual faces", "masked texels"
    );
    for k in 1..=sets.layer_count() {
        let level = sets.hit_level(k);
        let superfaces = assignment.superface_level.iter().filter(|&&l| l == level).count();
        out += &format!(
            "{:>5} {:>10} {:>12} {:>14} {:>14}\n",
            level,
            superfaces,
            sets.init(k).len(),
            sets.residual(k).len(),
            masked(level).map_or("-".into(), |m| m.to_string()),
        );
    }
    let total_faces = sets.face_count();
    out += &format!("faces {total_faces}, superfaces {}\n", assignment.superface_level.len());
    if let Some(cov) = report
        .as_ref()
        .and_then(|r| r["stages"].as_array()?.iter().find(|s| s["stage"] == "blend").cloned())
    {
        let c = &cov["details"]["coverage"];
        out += &format!(
            "coverage {}/{} occupied texels ({:.2}%)\n",
            c["covered"],
            c["occupied"],
            c["fraction"].as_f64().unwrap_or(0.0) * 100.0
        );
    }
    Ok(out)
}

/// Loads the inputs of the blend stages from a finished workdir, for
/// inspection and tests.
pub fn load_layers(workdir: &Path) -> Result<(RenderManifest, Vec<UvLayer>)> {
    let manifest = RenderManifest::load(&workdir.join(MANIFEST))?;
    let layers = manifest
        .levels
        .iter()
        .map(|l| UvLayer::read_raw(&workdir.join(layer_name(l.level))))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, layers))
}

/// Loads the textured, normalized mesh of a workdir.
pub fn load_workdir_mesh(workdir: &Path) -> Result<Mesh> {
    load_mesh(&workdir.join(MESH))
}
