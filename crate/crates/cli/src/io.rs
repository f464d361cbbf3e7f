//! File plumbing: PNG conversion, versioned JSON records, and the on-disk
//! scene-directory layout shared by `synth`, `train`, and `eval`.
//!
//! A scene directory looks like
//!
//! ```text
//! scene/
//!   scene.json      context cameras; gaussians_path points at gt.ply
//!   targets.json    held-out cameras, same schema
//!   gt.ply          ground-truth splats
//!   images/         context_000.png ... target_000.png ...
//! ```
//!
//! and a training run directory like
//!
//! ```text
//! run/
//!   summary.json    final metrics plus the exact configuration
//!   report.jsonl    one JSON step record per line
//!   final.ply       splats aggregated under the predicted poses
//!   poses.json      predicted context cameras (normalized scene units)
//!   renders/        ground-truth-pose renders of the held-out cameras
//! ```
//!
//! Images are written as 16-bit RGB PNG: 8 bits would quantize at ~1/256,
//! visible in PSNR round-trip checks; 16 bits keep the quantization three
//! orders of magnitude below anything the metrics resolve.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use localsplat_core::gaussians::ply::load_ply;
use localsplat_core::rasterizer::ImageBuffer;
use localsplat_core::scenefile::{load_scene_file, SceneFile};
use localsplat_core::trainer::ablation::{AblationSuite, ArmSummary, OrderingCheck};
use localsplat_core::trainer::{SceneSpec, SyntheticScene, TrainSummary};

use crate::error::{CliError, PathCtx, Result};

/// Version gate for every JSON file this binary owns (scene files carry
/// their own version inside the core crate).
pub const CLI_SCHEMA_VERSION: u32 = 1;

pub const SCENE_JSON: &str = "scene.json";
pub const TARGETS_JSON: &str = "targets.json";
pub const GT_PLY: &str = "gt.ply";
pub const IMAGES_DIR: &str = "images";
pub const RENDERS_DIR: &str = "renders";

// ---------------------------------------------------------------------------
// JSON records

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecFile {
    pub schema_version: u32,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub schema_version: u32,
    pub suite: AblationSuite,
    /// Scene-count override for smoke runs; the frozen grids use their
    /// built-in counts when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenes: Option<u64>,
    /// Step-count override for smoke runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub forcing: String,
    pub norm: String,
    pub steps: u64,
    pub seed: u64,
    pub summary: TrainSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerViewScore {
    pub view: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucBlock {
    pub thresholds_deg: Vec<f64>,
    pub values: Vec<f64>,
    pub aggregation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub schema_version: u32,
    pub per_view: Vec<PerViewScore>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub pose_auc: AucBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostOptFile {
    pub schema_version: u32,
    pub iters: usize,
    pub initial_psnr_db: f64,
    pub final_psnr_db: f64,
    pub losses: Vec<f64>,
}

/// Hand-off from the `ablate` parent to one worker process.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfigFile {
    pub schema_version: u32,
    pub suite: AblationSuite,
    pub arm: String,
    pub scene_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    pub out_json: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerResultFile {
    pub schema_version: u32,
    pub suite: AblationSuite,
    pub arm: String,
    pub scene_seed: u64,
    pub summary: TrainSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateReportFile {
    pub schema_version: u32,
    pub suite: AblationSuite,
    pub scenes: u64,
    pub arms: Vec<ArmSummary>,
    pub checks: Vec<OrderingCheck>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// Reads a CLI-owned JSON file, rejecting schema-version mismatches before
/// strict field validation so future formats fail with a version message.
pub fn read_versioned_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).path_ctx(path)?;
    let probe: VersionProbe = serde_json::from_str(&text).path_ctx(path)?;
    if probe.schema_version != CLI_SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "{}: schema_version {} but this build reads {}",
            path.display(),
            probe.schema_version,
            CLI_SCHEMA_VERSION
        )));
    }
    serde_json::from_str(&text).path_ctx(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).path_ctx(path)?);
    serde_json::to_writer_pretty(&mut w, value).path_ctx(path)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).path_ctx(path)?);
    for v in values {
        serde_json::to_writer(&mut w, v).path_ctx(path)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG

pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut out = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(img.width, img.height);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let rgb = img.pixel(x, y);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        *px = image::Rgb([q(rgb.x), q(rgb.y), q(rgb.z)]);
    }
    out.save(path).path_ctx(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).path_ctx(path)?.into_rgb16();
    let mut out = ImageBuffer::zeros(img.width(), img.height());
    for (x, y, px) in img.enumerate_pixels() {
        let v = nalgebra::Vector3::new(
            px.0[0] as f64 / 65535.0,
            px.0[1] as f64 / 65535.0,
            px.0[2] as f64 / 65535.0,
        );
        out.set_pixel(x, y, v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scene directories

/// A scene directory pulled back into memory, keeping the camera records so
/// callers can reuse view ids and image paths.
pub struct LoadedSceneDir {
    pub scene: SyntheticScene,
    pub context_file: SceneFile,
    pub target_file: SceneFile,
}

fn load_views(
    dir: &Path,
    file: &SceneFile,
    expect_w: u32,
    expect_h: u32,
) -> Result<Vec<(localsplat_core::CameraPose, ImageBuffer)>> {
    let poses = file.poses()?;
    let mut out = Vec::with_capacity(poses.len());
    for (view, pose) in file.views.iter().zip(poses) {
        let img_path = dir.join(&view.image_path);
        let img = load_png(&img_path)?;
        if img.width != expect_w || img.height != expect_h {
            return Err(CliError::config(format!(
                "{}: image is {}x{} but intrinsics say {}x{}",
                img_path.display(),
                img.width,
                img.height,
                expect_w,
                expect_h
            )));
        }
        out.push((pose, img));
    }
    Ok(out)
}

pub fn load_scene_dir(dir: &Path) -> Result<LoadedSceneDir> {
    let context_file = load_scene_file(dir.join(SCENE_JSON)).path_ctx(&dir.join(SCENE_JSON))?;
    let target_file = load_scene_file(dir.join(TARGETS_JSON)).path_ctx(&dir.join(TARGETS_JSON))?;
    if context_file.intrinsics != target_file.intrinsics {
        return Err(CliError::config(format!(
            "{}: context and target intrinsics differ",
            dir.display()
        )));
    }
    let k = context_file.intrinsics.to_intrinsics()?;

    let ply_rel = context_file.gaussians_path.clone().ok_or_else(|| {
        CliError::config(format!("{}: scene.json has no gaussians_path", dir.display()))
    })?;
    let ply_path = dir.join(&ply_rel);
    let gt_gaussians = load_ply(&ply_path).path_ctx(&ply_path)?;

    let context = load_views(dir, &context_file, k.width, k.height)?;
    let target_views = load_views(dir, &target_file, k.width, k.height)?;

    let scene = SyntheticScene {
        gt_gaussians,
        gt_poses: context.iter().map(|(p, _)| *p).collect(),
        gt_intrinsics: k,
        context_views: context.into_iter().map(|(_, img)| img).collect(),
        target_views,
        seed: 0,
    };
    Ok(LoadedSceneDir { scene, context_file, target_file })
}

pub fn save_scene_dir(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    use localsplat_core::scenefile::{save_scene_file, ViewRecord};

    std::fs::create_dir_all(dir.join(IMAGES_DIR)).path_ctx(dir)?;
    localsplat_core::gaussians::ply::save_ply(&scene.gt_gaussians, &dir.join(GT_PLY))
        .path_ctx(&dir.join(GT_PLY))?;

    let mut context_views = Vec::new();
    for (i, (pose, img)) in scene.gt_poses.iter().zip(&scene.context_views).enumerate() {
        let rel = format!("{IMAGES_DIR}/context_{i:03}.png");
        save_png(&dir.join(&rel), img)?;
        context_views.push(ViewRecord::new(i as u32, pose, rel));
    }
    let mut target_views = Vec::new();
    for (i, (pose, img)) in scene.target_views.iter().enumerate() {
        let rel = format!("{IMAGES_DIR}/target_{i:03}.png");
        save_png(&dir.join(&rel), img)?;
        target_views.push(ViewRecord::new(
            (scene.gt_poses.len() + i) as u32,
            pose,
            rel,
        ));
    }

    let context_file =
        SceneFile::new(&scene.gt_intrinsics, context_views, Some(GT_PLY.to_string()));
    let target_file =
        SceneFile::new(&scene.gt_intrinsics, target_views, Some(GT_PLY.to_string()));
    save_scene_file(dir.join(SCENE_JSON), &context_file).path_ctx(&dir.join(SCENE_JSON))?;
    save_scene_file(dir.join(TARGETS_JSON), &target_file).path_ctx(&dir.join(TARGETS_JSON))?;
    Ok(())
}
