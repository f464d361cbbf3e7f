//! Camera models, poses, rotation parameterization, and scene-scale
//! normalization.
//!
//! Conventions used across the whole crate:
//!
//! * Poses are **camera-to-world**: `x_world = R * x_cam + t`. The camera
//!   center in world coordinates is therefore just `t`.
//! * Camera space is right-handed with `+x` right, `+y` down, `+z` forward
//!   (the viewing direction).
//! * Pixel `(u, v)` covers the unit square `[u, u+1) x [v, v+1)`; its center
//!   sits at `(u + 0.5, v + 0.5)` in continuous image coordinates.
//! * Rotation tangents are **right-multiplied**: a perturbation `w` acts as
//!   `R * exp(hat(w))`, and translation perturbations are plain additions.
//!   All pose gradients in this crate live in that `so(3) (+) R^3` tangent.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Scale below which a scene or a rotation seed is considered degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Tolerance used when validating that a matrix is a rotation.
const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(String),
    #[error("rotation seed is rank-deficient (second singular value {sigma2:.3e})")]
    DegenerateSeed { sigma2: f64 },
    #[error("scene scale {scale:.3e} is below {DEGENERACY_EPS:.0e}; cannot normalize")]
    DegenerateScene { scale: f64 },
    #[error("field of view must lie in (0, pi), got {0}")]
    InvalidFov(f64),
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Small so(3) helpers shared by the gradient code in other modules.
// ---------------------------------------------------------------------------

/// Right-multiplied `so(3) (+) R^3` pose tangent (rotation part first): a
/// step `(w, dt)` moves a pose to `(R exp(hat(w)), t + dt)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PoseTangent {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

/// Cross-product matrix: `hat(w) * x == w.cross(&x)`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] for skew-symmetric matrices; for a general matrix this
/// reads the entries `(m21, m02, m10)`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula, `exp(hat(w))`, with a series fallback near zero.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    if theta2 < 1e-16 {
        // Second-order Taylor expansion; exact enough at this magnitude.
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / theta2)
}

/// Geodesic angle of a rotation matrix, in radians.
///
/// Uses the quaternion `atan2` form, which stays accurate for both tiny and
/// near-`pi` angles (unlike the `acos` of the trace).
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let q = nalgebra::UnitQuaternion::from_matrix(r);
    let (w, v) = (q.w, q.imag());
    2.0 * v.norm().atan2(w.abs())
}

// ---------------------------------------------------------------------------
// Intrinsics
// ---------------------------------------------------------------------------

/// Pinhole intrinsics for an image of `width * height` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Validating constructor: focal lengths must be positive and the
    /// principal point must fall inside the image.
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fx.is_finite() && fy > 0.0 && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be finite and positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Symmetric intrinsics from a horizontal field of view, with the
    /// principal point at the image center.
    pub fn from_fov(fov_x: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let f = focal_from_fov(fov_x, width as f64)?;
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Camera-space direction (unnormalized, `z = 1`) through the center of
    /// pixel `(u, v)`.
    pub fn pixel_direction_cam(&self, u: u32, v: u32) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Horizontal field of view implied by `fx`.
    pub fn fov_x(&self) -> f64 {
        fov_from_focal(self.fx, self.width as f64).expect("validated focal")
    }
}

/// Focal length (pixels) for a given horizontal field of view and image width.
pub fn focal_from_fov(fov: f64, width_px: f64) -> Result<f64, GeometryError> {
    if !(fov > 0.0 && fov < std::f64::consts::PI) {
        return Err(GeometryError::InvalidFov(fov));
    }
    Ok(width_px / (2.0 * (fov / 2.0).tan()))
}

/// Horizontal field of view for a given focal length and image width.
pub fn fov_from_focal(focal: f64, width_px: f64) -> Result<f64, GeometryError> {
    if !(focal > 0.0 && focal.is_finite()) {
        return Err(GeometryError::InvalidFocal(focal));
    }
    Ok(2.0 * (width_px / (2.0 * focal)).atan())
}

// ---------------------------------------------------------------------------
// Poses
// ---------------------------------------------------------------------------

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    /// Validating constructor; rejects matrices that are not special
    /// orthogonal to within `1e-6`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram_defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if gram_defect > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "R^T R deviates from identity by {gram_defect:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!("determinant {det} != +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera center in world coordinates (equals `translation` for a
    /// camera-to-world pose).
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self . other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World point expressed in this camera's frame.
    pub fn world_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Right-tangent retraction: rotate by `exp(hat(step.rotation))` on the
    /// right and shift the translation by `step.translation`.
    pub fn retract(&self, step: &PoseTangent) -> Self {
        Self {
            rotation: self.rotation * so3_exp(&step.rotation),
            translation: self.translation + step.translation,
        }
    }
}

/// Pose of `p_j` expressed in the frame of `p_i`: `p_i^-1 . p_j`.
///
/// Rotation `R_i^T R_j`, translation `R_i^T (t_j - t_i)`. Invariant under any
/// global rigid transform applied to both inputs.
pub fn relative_pose(p_i: &CameraPose, p_j: &CameraPose) -> CameraPose {
    let rt = p_i.rotation.transpose();
    CameraPose {
        rotation: rt * p_j.rotation,
        translation: rt * (p_j.translation - p_i.translation),
    }
}

// ---------------------------------------------------------------------------
// 9D rotation seeds and SVD orthogonalization
// ---------------------------------------------------------------------------

/// Unconstrained 9-parameter rotation seed, row-major. The map to SO(3) goes
/// through [`orthogonalize_9d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation9D(pub [f64; 9]);

impl Rotation9D {
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = m[(i, j)];
            }
        }
        Self(out)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let v = &self.0;
        Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
    }
}

/// Result of projecting a 9D seed onto SO(3), with enough of the SVD retained
/// to pull gradients back through the projection.
#[derive(Debug, Clone)]
pub struct OrthogonalizedRotation {
    pub rotation: Matrix3<f64>,
    v: Matrix3<f64>,
    /// Sign-adjusted singular values `(s1, s2, det_sign * s3)`.
    sigma: Vector3<f64>,
}

/// Nearest rotation (Frobenius norm) to an arbitrary 3x3 seed.
///
/// Computes `U diag(1, 1, det(U V^T)) V^T` from the SVD `M = U S V^T`; the
/// determinant correction keeps the result in SO(3) even for seeds with
/// negative determinant. Seeds whose second singular value vanishes have no
/// unique nearest rotation and are rejected.
pub fn orthogonalize_9d(seed: &Rotation9D) -> Result<Matrix3<f64>, GeometryError> {
    orthogonalize_9d_with_grad(seed).map(|o| o.rotation)
}

/// As [`orthogonalize_9d`], but keeps the factorization for [`OrthogonalizedRotation::backward`].
pub fn orthogonalize_9d_with_grad(
    seed: &Rotation9D,
) -> Result<OrthogonalizedRotation, GeometryError> {
    let m = seed.to_matrix();
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let s = svd.singular_values; // sorted descending
    if s[1] <= DEGENERACY_EPS {
        return Err(GeometryError::DegenerateSeed { sigma2: s[1] });
    }
    let sign = (u.determinant() * v_t.determinant()).signum();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * d * v_t;
    Ok(OrthogonalizedRotation {
        rotation,
        v: v_t.transpose(),
        sigma: Vector3::new(s[0], s[1], sign * s[2]),
    })
}

impl OrthogonalizedRotation {
    /// Pulls a right-tangent gradient at the projected rotation back to the
    /// nine seed entries.
    ///
    /// Writing the projection as the signed polar factor `M = R S` with
    /// `S = V diag(sigma) V^T`, a seed perturbation `dM` moves the rotation by
    /// `dR = R hat(w)` where `hat(w)` solves the Sylvester equation
    /// `hat(w) S + S hat(w) = R^T dM - dM^T R`. This method applies the
    /// adjoint of the map `dM -> w` to `grad_w`.
    pub fn backward(&self, grad_w: &Vector3<f64>) -> Rotation9D {
        // Adjoint of vee: place the tangent gradient into a full matrix.
        let mut da = Matrix3::zeros();
        da[(2, 1)] = grad_w.x;
        da[(0, 2)] = grad_w.y;
        da[(1, 0)] = grad_w.z;
        // A = V A' V^T  =>  dL/dA' = V^T (dL/dA) V.
        let da_p = self.v.transpose() * da * self.v;
        // A'_ij = 2 K'_ij / (sigma_i + sigma_j), off-diagonal only.
        let mut dk_p = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut denom = self.sigma[i] + self.sigma[j];
                // Near-degenerate directions: clamp rather than blow up. The
                // projection is genuinely non-smooth there.
                if denom.abs() < 1e-9 {
                    denom = 1e-9_f64.copysign(if denom == 0.0 { 1.0 } else { denom });
                }
                dk_p[(i, j)] = 2.0 * da_p[(i, j)] / denom;
            }
        }
        // K' = V^T K V  =>  dL/dK = V (dL/dK') V^T.
        let dk = self.v * dk_p * self.v.transpose();
        // K = (X - X^T) / 2 with X = R^T dM.
        let dx = (dk - dk.transpose()) * 0.5;
        // X = R^T dM  =>  dL/dM = R (dL/dX).
        let dm = self.rotation * dx;
        Rotation9D::from_matrix(&dm)
    }
}

// ---------------------------------------------------------------------------
// Ray maps
// ---------------------------------------------------------------------------

/// Per-pixel camera rays in world coordinates, row-major pixel order.
#[derive(Debug, Clone)]
pub struct RayMap {
    pub width: u32,
    pub height: u32,
    pub origins: Vec<Vector3<f64>>,
    pub directions: Vec<Vector3<f64>>,
}

impl RayMap {
    pub fn at(&self, u: u32, v: u32) -> (Vector3<f64>, Vector3<f64>) {
        let idx = (v * self.width + u) as usize;
        (self.origins[idx], self.directions[idx])
    }
}

/// Unit-norm world-space rays through every pixel center.
pub fn intrinsics_to_rays(k: &CameraIntrinsics, pose: &CameraPose) -> RayMap {
    let n = (k.width * k.height) as usize;
    let mut directions = Vec::with_capacity(n);
    for v in 0..k.height {
        for u in 0..k.width {
            let d = k.pixel_direction_cam(u, v).normalize();
            directions.push(pose.rotation * d);
        }
    }
    RayMap {
        width: k.width,
        height: k.height,
        origins: vec![pose.center(); n],
        directions,
    }
}

// ---------------------------------------------------------------------------
// Scene-scale normalization
// ---------------------------------------------------------------------------

/// How to pick the scale factor that maps a camera rig to canonical size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationStrategy {
    /// Largest pairwise camera-center distance becomes 1.
    MaxPairwise,
    /// Mean over ordered pairs of camera-center distances becomes 1.
    MeanPairwise,
    /// Largest camera-center norm becomes 1 (origin-dependent).
    MaxTranslation,
    /// Leave the scene untouched; scale is reported as 1.
    None,
}

/// Divides every camera center by a strategy-dependent scene scale and
/// returns the rescaled poses together with the scale that was divided out.
/// Rotations are untouched, so all relative rotations are exactly preserved.
pub fn normalize_scene(
    poses: &[CameraPose],
    strategy: NormalizationStrategy,
) -> Result<(Vec<CameraPose>, f64), GeometryError> {
    let scale = match strategy {
        NormalizationStrategy::MaxPairwise => {
            require_poses(poses, 2)?;
            let mut best = 0.0_f64;
            for i in 0..poses.len() {
                for j in (i + 1)..poses.len() {
                    best = best.max((poses[i].center() - poses[j].center()).norm());
                }
            }
            best
        }
        NormalizationStrategy::MeanPairwise => {
            require_poses(poses, 2)?;
            let n = poses.len();
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        sum += (poses[i].center() - poses[j].center()).norm();
                    }
                }
            }
            sum / (n * (n - 1)) as f64
        }
        NormalizationStrategy::MaxTranslation => {
            require_poses(poses, 1)?;
            poses.iter().map(|p| p.center().norm()).fold(0.0, f64::max)
        }
        NormalizationStrategy::None => {
            return Ok((poses.to_vec(), 1.0));
        }
    };
    if scale < DEGENERACY_EPS {
        return Err(GeometryError::DegenerateScene { scale });
    }
    let rescaled = poses
        .iter()
        .map(|p| CameraPose { rotation: p.rotation, translation: p.translation / scale })
        .collect();
    Ok((rescaled, scale))
}

fn require_poses(poses: &[CameraPose], needed: usize) -> Result<(), GeometryError> {
    if poses.len() < needed {
        return Err(GeometryError::TooFewPoses { needed, got: poses.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn rot_z(angle: f64) -> Matrix3<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle).to_rotation_matrix().into_inner()
    }

    #[test]
    fn identity_seed_projects_to_identity() {
        let r = orthogonalize_9d(&Rotation9D::from_matrix(&Matrix3::identity())).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn scaled_identity_seed_projects_to_identity() {
        let r = orthogonalize_9d(&Rotation9D::from_matrix(&(Matrix3::identity() * 2.0))).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn zero_seed_is_rejected() {
        let err = orthogonalize_9d(&Rotation9D([0.0; 9])).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateSeed { .. }));
    }

    #[test]
    fn rank_one_seed_is_rejected() {
        // Outer product of two vectors: rank 1.
        let m = Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.5, -1.0, 2.0).transpose();
        let err = orthogonalize_9d(&Rotation9D::from_matrix(&m)).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateSeed { .. }));
    }

    #[test]
    fn negative_determinant_seed_still_lands_in_so3() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let r = orthogonalize_9d(&Rotation9D::from_matrix(&m)).unwrap();
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn relative_pose_of_pure_translations() {
        let p_i = CameraPose { rotation: Matrix3::identity(), translation: Vector3::new(1.0, 0.0, 0.0) };
        let p_j = CameraPose { rotation: Matrix3::identity(), translation: Vector3::new(2.0, 0.0, 0.0) };
        let rel = relative_pose(&p_i, &p_j);
        assert_relative_eq!(rel.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(rel.translation, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn relative_pose_round_trip() {
        let p_i = CameraPose { rotation: rot_z(0.7), translation: Vector3::new(0.3, -0.2, 1.1) };
        let p_j = CameraPose {
            rotation: rot_z(-0.4) * so3_exp(&Vector3::new(0.2, 0.1, 0.0)),
            translation: Vector3::new(-0.5, 0.9, 0.4),
        };
        let rebuilt = p_i.compose(&relative_pose(&p_i, &p_j));
        assert_relative_eq!(rebuilt.rotation, p_j.rotation, epsilon = 1e-6);
        assert_relative_eq!(rebuilt.translation, p_j.translation, epsilon = 1e-6);
    }

    #[test]
    fn max_pairwise_scale_of_right_triangle() {
        let poses: Vec<_> = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0]]
            .iter()
            .map(|t| CameraPose { rotation: Matrix3::identity(), translation: Vector3::from_row_slice(t) })
            .collect();
        let (_, s) = normalize_scene(&poses, NormalizationStrategy::MaxPairwise).unwrap();
        assert_relative_eq!(s, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_pairwise_scale_of_collinear_cameras() {
        let poses: Vec<_> = [0.0, 1.0, 2.0]
            .iter()
            .map(|x| CameraPose { rotation: Matrix3::identity(), translation: Vector3::new(*x, 0.0, 0.0) })
            .collect();
        let (_, s) = normalize_scene(&poses, NormalizationStrategy::MeanPairwise).unwrap();
        assert_relative_eq!(s, 4.0 / 3.0, epsilon = 1e-12);
        let (_, s_mt) = normalize_scene(&poses, NormalizationStrategy::MaxTranslation).unwrap();
        assert_relative_eq!(s_mt, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn none_strategy_is_identity() {
        let poses = vec![CameraPose { rotation: rot_z(0.3), translation: Vector3::new(5.0, 0.0, 0.0) }];
        let (out, s) = normalize_scene(&poses, NormalizationStrategy::None).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(out[0].translation, poses[0].translation);
    }

    #[test]
    fn coincident_cameras_cannot_be_normalized() {
        let poses = vec![CameraPose::identity(), CameraPose::identity()];
        let err = normalize_scene(&poses, NormalizationStrategy::MaxPairwise).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateScene { .. }));
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        // 2x2 image with the principal point at the corner shared by all four
        // pixels; pixel (0,0) has center (0.5, 0.5) at offset zero from cx,cy.
        let k = CameraIntrinsics::new(100.0, 100.0, 0.5, 0.5, 2, 2).unwrap();
        let rays = intrinsics_to_rays(&k, &CameraPose::identity());
        let (o, d) = rays.at(0, 0);
        assert_relative_eq!(o, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(d, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn forty_five_degree_ray() {
        // Offset of exactly fx pixels from the principal point: direction
        // (1, 0, 1) / sqrt(2).
        let k = CameraIntrinsics::new(8.0, 8.0, 0.5, 0.5, 16, 16).unwrap();
        let rays = intrinsics_to_rays(&k, &CameraPose::identity());
        let (_, d) = rays.at(8, 0);
        let expect = Vector3::new(1.0, 0.0, 1.0) / 2.0_f64.sqrt();
        assert_relative_eq!(d, expect, epsilon = 1e-12);
    }

    #[test]
    fn fov_focal_round_trip() {
        let f = focal_from_fov(std::f64::consts::FRAC_PI_2, 100.0).unwrap();
        assert_relative_eq!(f, 50.0, epsilon = 1e-12);
        let fov = fov_from_focal(f, 100.0).unwrap();
        assert_relative_eq!(fov, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn intrinsics_validation_rejects_bad_inputs() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 9.0, 0.0, 4, 4).is_err());
        assert!(focal_from_fov(0.0, 100.0).is_err());
        assert!(focal_from_fov(std::f64::consts::PI, 100.0).is_err());
    }

    #[test]
    fn pose_validation_rejects_reflections() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn rotation_angle_matches_known_rotation() {
        assert_relative_eq!(rotation_angle(&rot_z(0.8)), 0.8, epsilon = 1e-12);
        assert_relative_eq!(rotation_angle(&Matrix3::identity()), 0.0, epsilon = 1e-12);
    }
}
