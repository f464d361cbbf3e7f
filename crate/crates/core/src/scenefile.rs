//! On-disk scene description: camera intrinsics, per-view poses, image paths,
//! and an optional path to a Gaussian PLY. Human-diffable JSON with a
//! `schema_version` gate so stale fixtures fail loudly instead of silently.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose, GeometryError, Rotation9D};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene file has schema_version {found}, this build reads {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("view {view}: stored rotation is not a rotation matrix: {source}")]
    BadPose { view: usize, source: GeometryError },
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
}

impl IntrinsicsRecord {
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, w: k.width, h: k.height }
    }

    pub fn to_intrinsics(&self) -> Result<CameraIntrinsics, SceneFileError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.w, self.h)
            .map_err(SceneFileError::BadIntrinsics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub id: u32,
    /// Camera-to-world rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub image_path: String,
}

impl ViewRecord {
    pub fn new(id: u32, pose: &CameraPose, image_path: impl Into<String>) -> Self {
        Self {
            id,
            rotation: Rotation9D::from_matrix(&pose.rotation).0,
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            image_path: image_path.into(),
        }
    }

    /// Reconstructs the pose, validating that the stored matrix really is a
    /// rotation. The `view` index is only used for the error message.
    pub fn pose(&self, view: usize) -> Result<CameraPose, SceneFileError> {
        let r = Rotation9D(self.rotation).to_matrix();
        let t = nalgebra::Vector3::new(self.translation[0], self.translation[1], self.translation[2]);
        CameraPose::new(r, t).map_err(|source| SceneFileError::BadPose { view, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    pub intrinsics: IntrinsicsRecord,
    pub views: Vec<ViewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussians_path: Option<String>,
}

impl SceneFile {
    pub fn new(
        intrinsics: &CameraIntrinsics,
        views: Vec<ViewRecord>,
        gaussians_path: Option<String>,
    ) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            intrinsics: IntrinsicsRecord::from_intrinsics(intrinsics),
            views,
            gaussians_path,
        }
    }

    /// All poses in view order, validated.
    pub fn poses(&self) -> Result<Vec<CameraPose>, SceneFileError> {
        self.views.iter().enumerate().map(|(i, v)| v.pose(i)).collect()
    }
}

/// Used to read the version field before committing to the strict schema, so
/// a future format fails with a version message, not a field-name one.
#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

pub fn read_scene_file<R: Read>(reader: R) -> Result<SceneFile, SceneFileError> {
    let text: String = std::io::read_to_string(reader)?;
    let probe: VersionProbe = serde_json::from_str(&text)?;
    if probe.schema_version != SCENE_SCHEMA_VERSION {
        return Err(SceneFileError::SchemaVersion {
            found: probe.schema_version,
            expected: SCENE_SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_str(&text)?)
}

pub fn write_scene_file<W: Write>(writer: W, scene: &SceneFile) -> Result<(), SceneFileError> {
    serde_json::to_writer_pretty(writer, scene)?;
    Ok(())
}

pub fn load_scene_file(path: impl AsRef<Path>) -> Result<SceneFile, SceneFileError> {
    read_scene_file(BufReader::new(File::open(path)?))
}

pub fn save_scene_file(path: impl AsRef<Path>, scene: &SceneFile) -> Result<(), SceneFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene_file(&mut w, scene)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use nalgebra::Vector3;

    fn sample() -> SceneFile {
        let k = CameraIntrinsics::new(50.0, 52.0, 31.5, 23.5, 64, 48).unwrap();
        let pose_a = CameraPose::identity();
        let pose_b = CameraPose {
            rotation: so3_exp(&Vector3::new(0.2, -0.1, 0.05)),
            translation: Vector3::new(0.4, -0.2, 1.1),
        };
        SceneFile::new(
            &k,
            vec![
                ViewRecord::new(0, &pose_a, "views/000.png"),
                ViewRecord::new(1, &pose_b, "views/001.png"),
            ],
            Some("gaussians.ply".into()),
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let scene = sample();
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &scene).unwrap();
        let back = read_scene_file(buf.as_slice()).unwrap();
        assert_eq!(back, scene);
        let poses = back.poses().unwrap();
        assert_eq!(poses[1].translation, Vector3::new(0.4, -0.2, 1.1));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut scene = sample();
        scene.schema_version = 2;
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &scene).unwrap();
        assert!(matches!(
            read_scene_file(buf.as_slice()),
            Err(SceneFileError::SchemaVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &sample()).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["surprise"] = serde_json::json!(true);
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(read_scene_file(text.as_bytes()), Err(SceneFileError::Json(_))));
    }

    #[test]
    fn corrupt_rotation_is_rejected_at_pose_time() {
        let mut scene = sample();
        scene.views[1].rotation[0] = 3.0;
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &scene).unwrap();
        let back = read_scene_file(buf.as_slice()).unwrap();
        assert!(matches!(back.poses(), Err(SceneFileError::BadPose { view: 1, .. })));
    }

    #[test]
    fn missing_gaussians_path_round_trips_as_none() {
        let mut scene = sample();
        scene.gaussians_path = None;
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &scene).unwrap();
        assert!(!String::from_utf8_lossy(&buf).contains("gaussians_path"));
        assert_eq!(read_scene_file(buf.as_slice()).unwrap().gaussians_path, None);
    }
}
