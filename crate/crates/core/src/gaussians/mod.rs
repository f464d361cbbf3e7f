//! Gaussian splats, per-view local scenes, and their aggregation into one
//! global scene.
//!
//! A "local" scene is a set of splats expressed in one camera's frame
//! together with that camera's pose and intrinsics. Aggregation rigidly maps
//! every local set into world space with a caller-supplied pose per view and
//! concatenates the results, remembering which view each splat came from.

pub mod ply;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{locals} local scenes but {poses} aggregation poses")]
    LengthMismatch { locals: usize, poses: usize },
    #[error("{gaussians} gaussians but {provenance} provenance entries")]
    ProvenanceMismatch { gaussians: usize, provenance: usize },
}

/// One anisotropic 3D Gaussian splat.
///
/// `opacity` and each `color` channel live in `[0, 1]`; `log_scale` stores
/// per-axis standard deviations in log space so the covariance
/// `R diag(exp(2 s)) R^T` is positive definite by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub opacity: f64,
    pub rotation: UnitQuaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub color: Vector3<f64>,
}

impl Gaussian {
    /// 3x3 world covariance `R S^2 R^T` with `S = diag(exp(log_scale))`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.log_scale.map(|v| (2.0 * v).exp()));
        r * s2 * r.transpose()
    }
}

/// Splats predicted in a single camera's frame.
#[derive(Debug, Clone)]
pub struct LocalScene {
    pub gaussians: Vec<Gaussian>,
    /// Pose the view was captured with (bookkeeping; aggregation takes its
    /// pose list explicitly so callers can swap predicted for ground truth).
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    pub view_id: u32,
}

/// World-space scene plus, for every splat, the id of the view it came from.
#[derive(Debug, Clone, Default)]
pub struct GlobalScene {
    pub gaussians: Vec<Gaussian>,
    pub provenance: Vec<u32>,
}

impl GlobalScene {
    pub fn new(gaussians: Vec<Gaussian>, provenance: Vec<u32>) -> Result<Self, SceneError> {
        if gaussians.len() != provenance.len() {
            return Err(SceneError::ProvenanceMismatch {
                gaussians: gaussians.len(),
                provenance: provenance.len(),
            });
        }
        Ok(Self { gaussians, provenance })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Rigidly maps a local scene's splats into world space.
///
/// Means are transformed by the pose, orientations are left-multiplied by the
/// pose rotation, and opacity / scale / color ride along unchanged.
pub fn to_world(local: &LocalScene, pose: &CameraPose) -> Vec<Gaussian> {
    let q_pose = UnitQuaternion::from_rotation_matrix(
        &nalgebra::Rotation3::from_matrix_unchecked(pose.rotation),
    );
    local
        .gaussians
        .iter()
        .map(|g| Gaussian {
            mean: pose.transform_point(&g.mean),
            rotation: q_pose * g.rotation,
            ..*g
        })
        .collect()
}

/// Concatenates all local scenes into world space, one aggregation pose per
/// view, preserving view order and within-view splat order.
pub fn aggregate(locals: &[LocalScene], poses: &[CameraPose]) -> Result<GlobalScene, SceneError> {
    if locals.len() != poses.len() {
        return Err(SceneError::LengthMismatch { locals: locals.len(), poses: poses.len() });
    }
    let total: usize = locals.iter().map(|l| l.gaussians.len()).sum();
    let mut gaussians = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (local, pose) in locals.iter().zip(poses) {
        gaussians.extend(to_world(local, pose));
        provenance.extend(std::iter::repeat(local.view_id).take(local.gaussians.len()));
    }
    Ok(GlobalScene { gaussians, provenance })
}

/// Drops every splat whose opacity is strictly below `threshold`; order of
/// the survivors (and their provenance) is preserved.
pub fn prune_by_opacity(scene: &GlobalScene, threshold: f64) -> GlobalScene {
    let mut gaussians = Vec::new();
    let mut provenance = Vec::new();
    for (g, &src) in scene.gaussians.iter().zip(&scene.provenance) {
        if g.opacity >= threshold {
            gaussians.push(*g);
            provenance.push(src);
        }
    }
    GlobalScene { gaussians, provenance }
}

/// Logistic sigmoid; maps pre-activation opacities/colors into `(0, 1)`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid. Inputs are clamped to `[1e-7, 1 - 1e-7]` so exact 0/1
/// stay finite.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}
