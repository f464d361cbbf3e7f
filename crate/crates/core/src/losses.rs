//! Training objectives: photometric image loss, pairwise relative-pose loss
//! (geodesic rotation + Huber translation), normalized focal-length loss,
//! opacity sparsity, and their weighted total.
//!
//! Every differentiable loss comes with an analytic gradient; pose-loss
//! gradients live in the right-multiplied tangent convention of
//! [`CameraPose::retract`](crate::geometry::CameraPose::retract).

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{relative_pose, CameraPose, PoseTangent};
use crate::metrics::{self, MetricsError};
use crate::rasterizer::ImageBuffer;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("image shapes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ShapeMismatch { a_w: u32, a_h: u32, b_w: u32, b_h: u32 },
    #[error("pose lists differ in length: {pred} vs {gt}")]
    PoseCountMismatch { pred: usize, gt: usize },
    #[error("pairwise pose loss needs at least 2 poses, got {0}")]
    TooFewPoses(usize),
    #[error("opacity loss over an empty list")]
    EmptyOpacities,
    #[error("loss weight {0} must be non-negative")]
    NegativeWeight(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Scalar weights of the total objective. All must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the focal-length term.
    pub lambda_intrin: f64,
    /// Weight of the pairwise relative-pose term.
    pub lambda_pose: f64,
    /// Weight of the opacity sparsity term.
    pub lambda_opacity: f64,
    /// Weight of the translation part *inside* the pose term.
    pub lambda_t: f64,
    /// Huber transition point for translation residuals.
    pub huber_delta: f64,
    /// Weight of the structural-dissimilarity (1 - SSIM) part of the image
    /// loss. Off by default: the image loss is plain MSE.
    pub lambda_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_intrin: 0.5,
            lambda_pose: 0.1,
            lambda_opacity: 0.01,
            lambda_t: 1.0,
            huber_delta: 1.0,
            lambda_ssim: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let checks = [
            (self.lambda_intrin, "lambda_intrin"),
            (self.lambda_pose, "lambda_pose"),
            (self.lambda_opacity, "lambda_opacity"),
            (self.lambda_t, "lambda_t"),
            (self.huber_delta, "huber_delta"),
            (self.lambda_ssim, "lambda_ssim"),
        ];
        for (v, name) in checks {
            if !(v >= 0.0) {
                return Err(LossError::NegativeWeight(name));
            }
        }
        Ok(())
    }
}

/// Photometric loss between a rendered and a target image: mean squared
/// error over all pixel channels, plus `lambda_ssim * (1 - SSIM)` when that
/// weight is positive. Returns the scalar and its gradient with respect to
/// the rendered image.
pub fn image_loss(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    w: &LossWeights,
) -> Result<(f64, ImageBuffer), LossError> {
    if !rendered.same_shape(target) {
        return Err(LossError::ShapeMismatch {
            a_w: rendered.width,
            a_h: rendered.height,
            b_w: target.width,
            b_h: target.height,
        });
    }
    let n = rendered.data.len() as f64;
    let mut grad = ImageBuffer::zeros(rendered.width, rendered.height);
    let mut loss = 0.0;
    for i in 0..rendered.data.len() {
        let r = rendered.data[i] - target.data[i];
        loss += r * r / n;
        grad.data[i] = 2.0 * r / n;
    }
    if w.lambda_ssim > 0.0 {
        let (s, ds) = metrics::ssim_with_grad(rendered, target)?;
        loss += w.lambda_ssim * (1.0 - s);
        for i in 0..grad.data.len() {
            grad.data[i] -= w.lambda_ssim * ds.data[i];
        }
    }
    Ok((loss, grad))
}

/// Geodesic angle between two rotations, radians:
/// `arccos(clamp((tr(R_gt^T R_pred) - 1)/2, -1, 1))`.
pub fn rotation_loss(r_pred: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let c = (((r_gt.transpose() * r_pred).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Elementwise Huber on the translation residual, summed over components.
pub fn translation_loss(t_pred: &Vector3<f64>, t_gt: &Vector3<f64>, delta: f64) -> f64 {
    let d = t_pred - t_gt;
    d.iter().map(|&x| huber(x, delta)).sum()
}

/// Mean over all ordered view pairs `i != j` of
/// `rotation_loss + lambda_t * translation_loss` evaluated on the relative
/// poses `p_i^-1 p_j` of both lists. Depends on relative structure only, so
/// it is invariant to a global rigid transform of either list.
pub fn pose_loss(
    pred: &[CameraPose],
    gt: &[CameraPose],
    w: &LossWeights,
) -> Result<f64, LossError> {
    pose_loss_impl(pred, gt, w, None)
}

/// As [`pose_loss`], also returning the gradient as one right-multiplied
/// tangent per predicted pose.
pub fn pose_loss_with_grad(
    pred: &[CameraPose],
    gt: &[CameraPose],
    w: &LossWeights,
) -> Result<(f64, Vec<PoseTangent>), LossError> {
    let mut grads = vec![PoseTangent::default(); pred.len()];
    let loss = pose_loss_impl(pred, gt, w, Some(&mut grads))?;
    Ok((loss, grads))
}

fn pose_loss_impl(
    pred: &[CameraPose],
    gt: &[CameraPose],
    w: &LossWeights,
    mut grads: Option<&mut Vec<PoseTangent>>,
) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::PoseCountMismatch { pred: pred.len(), gt: gt.len() });
    }
    let n = pred.len();
    if n < 2 {
        return Err(LossError::TooFewPoses(n));
    }
    let n_pairs = (n * (n - 1)) as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let rp = relative_pose(&pred[i], &pred[j]);
            let rg = relative_pose(&gt[i], &gt[j]);

            // Rotation part: u = arccos(c), c = (tr(B) - 1)/2, B = Rg^T Rp.
            let b = rg.rotation.transpose() * rp.rotation;
            let c = ((b.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            total += c.acos();

            // Translation part on the residual x = t_rel - t_rel_gt.
            let x = rp.translation - rg.translation;
            total += w.lambda_t * x.iter().map(|&v| huber(v, w.huber_delta)).sum::<f64>();

            let Some(g) = grads.as_deref_mut() else { continue };

            // du/dc, with the clamp boundary (angle exactly 0 or pi) mapped
            // to a zero subgradient.
            let du_dc = if c.abs() >= 1.0 { 0.0 } else { -1.0 / (1.0 - c * c).sqrt() };
            if du_dc != 0.0 {
                // Right-perturbing pred[j] by hat(e_k) changes tr(B) by
                // tr(B hat(e_k)) = -vee(B - B^T)_k; perturbing pred[i]
                // inserts -hat(e_k) after Rp^T... i.e. flips the sign with
                // B replaced by C = Rp Rg^T.
                let bd = b - b.transpose();
                let dc_dwj = -0.5 * Vector3::new(bd[(2, 1)], bd[(0, 2)], bd[(1, 0)]);
                let cmat = rp.rotation * rg.rotation.transpose();
                let cd = cmat - cmat.transpose();
                let dc_dwi = 0.5 * Vector3::new(cd[(2, 1)], cd[(0, 2)], cd[(1, 0)]);
                g[j].rotation += du_dc * dc_dwj / n_pairs;
                g[i].rotation += du_dc * dc_dwi / n_pairs;
            }

            // t_rel = exp(-hat(w_i)) R_i^T (t_j + dt_j - t_i - dt_i):
            //   d t_rel / d dt_j = R_i^T,   d t_rel / d dt_i = -R_i^T,
            //   d t_rel / d w_i  = hat(t_rel)   (column k is t_rel x e_k).
            let ht = Vector3::new(
                huber_grad(x.x, w.huber_delta),
                huber_grad(x.y, w.huber_delta),
                huber_grad(x.z, w.huber_delta),
            ) * (w.lambda_t / n_pairs);
            let ri_ht = pred[i].rotation * ht;
            g[j].translation += ri_ht;
            g[i].translation -= ri_ht;
            // hat(t_rel)^T ht = ht x t_rel.
            g[i].rotation += ht.cross(&rp.translation);
        }
    }
    Ok(total / n_pairs)
}

/// Squared distance between predicted and ground-truth focal lengths,
/// normalized by the image width so the default weight is
/// resolution-independent.
pub fn intrinsic_loss(f_pred: (f64, f64), f_gt: (f64, f64), image_width: f64) -> f64 {
    debug_assert!(f_gt.0 > 0.0 && f_gt.1 > 0.0 && image_width > 0.0);
    let dx = (f_pred.0 - f_gt.0) / image_width;
    let dy = (f_pred.1 - f_gt.1) / image_width;
    dx * dx + dy * dy
}

/// As [`intrinsic_loss`], also returning `d/d(f_pred)`.
pub fn intrinsic_loss_with_grad(
    f_pred: (f64, f64),
    f_gt: (f64, f64),
    image_width: f64,
) -> (f64, (f64, f64)) {
    let loss = intrinsic_loss(f_pred, f_gt, image_width);
    let w2 = image_width * image_width;
    (loss, (2.0 * (f_pred.0 - f_gt.0) / w2, 2.0 * (f_pred.1 - f_gt.1) / w2))
}

/// Mean absolute opacity (sparsity pressure).
pub fn opacity_loss(opacities: &[f64]) -> Result<f64, LossError> {
    if opacities.is_empty() {
        return Err(LossError::EmptyOpacities);
    }
    Ok(opacities.iter().map(|o| o.abs()).sum::<f64>() / opacities.len() as f64)
}

/// As [`opacity_loss`], also returning the per-opacity gradient
/// `sign(o_i) / M` (zero at exactly 0).
pub fn opacity_loss_with_grad(opacities: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    let loss = opacity_loss(opacities)?;
    let m = opacities.len() as f64;
    let grads = opacities
        .iter()
        .map(|&o| if o == 0.0 { 0.0 } else { o.signum() / m })
        .collect();
    Ok((loss, grads))
}

/// The four scalar parts of the total objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TotalLossParts {
    pub image: f64,
    pub intrinsics: f64,
    pub pose: f64,
    pub opacity: f64,
}

/// `image + lambda_intrin * intrinsics + lambda_pose * pose
///  + lambda_opacity * opacity`.
pub fn total_loss(parts: &TotalLossParts, w: &LossWeights) -> f64 {
    parts.image
        + w.lambda_intrin * parts.intrinsics
        + w.lambda_pose * parts.pose
        + w.lambda_opacity * parts.opacity
}
