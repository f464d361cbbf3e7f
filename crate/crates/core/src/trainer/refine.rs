//! Post-prediction refinement: a short photometric polish of an aggregated
//! scene, and per-image camera solving for pose-free evaluation.
//!
//! Both optimizers ride the renderer's analytic gradients. Camera updates are
//! retractions: Adam runs on a 6-vector that starts at zero each iteration,
//! so its output *is* the tangent step, and moments stay attached to the
//! tangent coordinates rather than to any global chart.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gaussians::GlobalScene;
use crate::geometry::{CameraIntrinsics, CameraPose, PoseTangent};
use crate::losses::{image_loss, LossWeights, TotalLossParts};
use crate::metrics::psnr;
use crate::rasterizer::{render, render_backward, ImageBuffer, RenderConfig};

use super::{Adam, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostOptConfig {
    pub iters: usize,
    pub lr_pose: f64,
    pub lr_mean: f64,
    pub lr_color: f64,
}

impl Default for PostOptConfig {
    fn default() -> Self {
        Self { iters: 200, lr_pose: 0.005, lr_mean: 0.0016, lr_color: 0.0025 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostOptReport {
    pub initial_psnr: f64,
    pub final_psnr: f64,
    /// Mean photometric loss at every iteration.
    pub losses: Vec<f64>,
}

fn mean_psnr(
    scene: &GlobalScene,
    poses: &[CameraPose],
    images: &[ImageBuffer],
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for (pose, img) in poses.iter().zip(images) {
        sum += psnr(&render(scene, pose, k, cfg), img)?;
    }
    Ok(sum / poses.len() as f64)
}

/// Jointly refines splat means, splat colors, and the given cameras against
/// their observed images. Opacities, scales, and orientations are untouched
/// (bitwise): the footprint of each splat is considered settled and only
/// placement, appearance, and viewpoints get polished.
pub fn post_optimize(
    scene: &GlobalScene,
    poses: &[CameraPose],
    observations: &[ImageBuffer],
    k: &CameraIntrinsics,
    cfg: &PostOptConfig,
    render_cfg: &RenderConfig,
) -> Result<(GlobalScene, Vec<CameraPose>, PostOptReport), TrainError> {
    if scene.gaussians.is_empty() {
        return Err(TrainError::EmptyScene);
    }
    if poses.len() != observations.len() || poses.is_empty() {
        return Err(TrainError::InvalidSpec(format!(
            "{} poses for {} observations",
            poses.len(),
            observations.len()
        )));
    }
    let weights = LossWeights::default();
    let n = scene.gaussians.len();
    let n_obs = poses.len();

    let mut scene = scene.clone();
    let mut poses = poses.to_vec();
    let initial_psnr = mean_psnr(&scene, &poses, observations, k, render_cfg)?;

    let mut opt_means = Adam::new(3 * n);
    let mut opt_colors = Adam::new(3 * n);
    let mut opt_poses: Vec<Adam> = (0..n_obs).map(|_| Adam::new(6)).collect();

    let mut losses = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let mut d_means = vec![Vector3::zeros(); n];
        let mut d_colors = vec![Vector3::zeros(); n];
        let mut d_poses = vec![PoseTangent::default(); n_obs];
        let mut loss = 0.0;
        let w_obs = 1.0 / n_obs as f64;
        for (vi, (pose, img)) in poses.iter().zip(observations).enumerate() {
            let rendered = render(&scene, pose, k, render_cfg);
            let (l, d_img) = image_loss(&rendered, img, &weights)?;
            loss += l * w_obs;
            let g = render_backward(&scene, pose, k, render_cfg, &d_img)?;
            for i in 0..n {
                d_means[i] += g.d_mean[i] * w_obs;
                d_colors[i] += g.d_color[i] * w_obs;
            }
            d_poses[vi].rotation = g.d_pose.rotation * w_obs;
            d_poses[vi].translation = g.d_pose.translation * w_obs;
        }
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                step: iter as u64,
                parts: TotalLossParts { image: loss, ..Default::default() },
                records: Vec::new(),
            });
        }
        losses.push(loss);

        let mut means: Vec<Vector3<f64>> = scene.gaussians.iter().map(|g| g.mean).collect();
        let mut colors: Vec<Vector3<f64>> = scene.gaussians.iter().map(|g| g.color).collect();
        opt_means.step_vec3(&mut means, &d_means, cfg.lr_mean);
        opt_colors.step_vec3(&mut colors, &d_colors, cfg.lr_color);
        for (g, (m, c)) in scene.gaussians.iter_mut().zip(means.iter().zip(&colors)) {
            g.mean = *m;
            // Colors live post-activation here, so keep them displayable.
            g.color = c.map(|x| x.clamp(0.0, 1.0));
        }
        for (vi, pose) in poses.iter_mut().enumerate() {
            let mut delta = [0.0; 6];
            let grad = [
                d_poses[vi].rotation.x,
                d_poses[vi].rotation.y,
                d_poses[vi].rotation.z,
                d_poses[vi].translation.x,
                d_poses[vi].translation.y,
                d_poses[vi].translation.z,
            ];
            opt_poses[vi].step(&mut delta, &grad, cfg.lr_pose);
            *pose = pose.retract(&PoseTangent {
                rotation: Vector3::new(delta[0], delta[1], delta[2]),
                translation: Vector3::new(delta[3], delta[4], delta[5]),
            });
        }
    }

    let final_psnr = mean_psnr(&scene, &poses, observations, k, render_cfg)?;
    Ok((scene, poses, PostOptReport { initial_psnr, final_psnr, losses }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub iters: usize,
    pub lr: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { iters: 300, lr: 0.003 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolvedPose {
    pub pose: CameraPose,
    /// False when the photometric descent hit a non-finite loss and the
    /// initial pose was returned instead.
    pub converged: bool,
    pub final_loss: f64,
}

/// Recovers the camera for `target` by photometric descent against a frozen
/// scene, starting from `init`. Divergence is not an error: the caller gets
/// the initial pose back with `converged == false` so evaluation can proceed
/// and count the failure.
pub fn solve_target_pose(
    scene: &GlobalScene,
    target: &ImageBuffer,
    k: &CameraIntrinsics,
    init: &CameraPose,
    cfg: &SolveConfig,
    render_cfg: &RenderConfig,
) -> Result<SolvedPose, TrainError> {
    if scene.gaussians.is_empty() {
        return Err(TrainError::EmptyScene);
    }
    let weights = LossWeights::default();
    let mut pose = *init;
    let mut opt = Adam::new(6);
    let mut final_loss = f64::INFINITY;
    for _ in 0..cfg.iters {
        let rendered = render(scene, &pose, k, render_cfg);
        let (l, d_img) = image_loss(&rendered, target, &weights)?;
        if !l.is_finite() {
            return Ok(SolvedPose { pose: *init, converged: false, final_loss: l });
        }
        final_loss = l;
        let g = render_backward(scene, &pose, k, render_cfg, &d_img)?;
        let grad = [
            g.d_pose.rotation.x,
            g.d_pose.rotation.y,
            g.d_pose.rotation.z,
            g.d_pose.translation.x,
            g.d_pose.translation.y,
            g.d_pose.translation.z,
        ];
        let mut delta = [0.0; 6];
        opt.step(&mut delta, &grad, cfg.lr);
        pose = pose.retract(&PoseTangent {
            rotation: Vector3::new(delta[0], delta[1], delta[2]),
            translation: Vector3::new(delta[3], delta[4], delta[5]),
        });
        if !(pose.translation.iter().all(|v| v.is_finite())) {
            return Ok(SolvedPose { pose: *init, converged: false, final_loss });
        }
    }
    Ok(SolvedPose { pose, converged: true, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle;
    use crate::trainer::{generate_scene, normalize_training_scene, SceneSpec};
    use crate::geometry::NormalizationStrategy;

    fn fixture() -> (GlobalScene, Vec<CameraPose>, Vec<ImageBuffer>, CameraIntrinsics) {
        let scene = generate_scene(&SceneSpec {
            num_views: 3,
            num_targets: 2,
            num_gaussians: 8,
            image_size: 32,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let ns = normalize_training_scene(&scene, NormalizationStrategy::None).unwrap();
        let images = ns.context_views.clone();
        (ns.gt, ns.context_poses, images, ns.k)
    }

    #[test]
    fn post_optimize_only_touches_means_colors_poses() {
        let (scene, poses, images, k) = fixture();
        let cfg = PostOptConfig { iters: 5, ..Default::default() };
        let (out, out_poses, report) =
            post_optimize(&scene, &poses, &images, &k, &cfg, &RenderConfig::default()).unwrap();
        assert_eq!(report.losses.len(), 5);
        assert_eq!(out.gaussians.len(), scene.gaussians.len());
        assert_eq!(out_poses.len(), poses.len());
        for (a, b) in scene.gaussians.iter().zip(&out.gaussians) {
            // Frozen blocks are bit-identical.
            assert_eq!(a.opacity.to_bits(), b.opacity.to_bits());
            assert_eq!(a.log_scale, b.log_scale);
            assert_eq!(a.rotation, b.rotation);
        }
        assert_eq!(scene.provenance, out.provenance);
    }

    #[test]
    fn post_optimize_improves_a_perturbed_scene() {
        let (scene, poses, images, k) = fixture();
        let mut bent = scene.clone();
        for (i, g) in bent.gaussians.iter_mut().enumerate() {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            g.mean += Vector3::new(0.02 * s, -0.015 * s, 0.02);
            g.color = (g.color + Vector3::new(0.08 * s, -0.06 * s, 0.05)).map(|x| x.clamp(0.0, 1.0));
        }
        let cfg = PostOptConfig { iters: 120, ..Default::default() };
        let (_, _, report) =
            post_optimize(&bent, &poses, &images, &k, &cfg, &RenderConfig::default()).unwrap();
        assert!(
            report.final_psnr > report.initial_psnr + 1.0,
            "expected >1 dB gain, got {} -> {}",
            report.initial_psnr,
            report.final_psnr
        );
        let last = *report.losses.last().unwrap();
        assert!(last < report.losses[0], "loss should drop: {report:?}");
    }

    #[test]
    fn solve_recovers_a_small_pose_offset() {
        let (scene, poses, images, k) = fixture();
        let truth = poses[0];
        let target = &images[0];
        let init = truth.retract(&PoseTangent {
            rotation: Vector3::new(0.02, -0.015, 0.01),
            translation: Vector3::new(0.02, 0.01, -0.015),
        });
        let init_rot_err = rotation_angle(&(truth.rotation.transpose() * init.rotation));
        let solved = solve_target_pose(
            &scene,
            target,
            &k,
            &init,
            &SolveConfig { iters: 250, lr: 0.003 },
            &RenderConfig::default(),
        )
        .unwrap();
        assert!(solved.converged);
        let rot_err = rotation_angle(&(truth.rotation.transpose() * solved.pose.rotation));
        let t_err = (solved.pose.translation - truth.translation).norm();
        assert!(
            rot_err < 0.25 * init_rot_err,
            "rotation error {rot_err} vs initial {init_rot_err}"
        );
        assert!(t_err < 0.02, "translation error {t_err}");
    }

    #[test]
    fn solve_at_the_exact_pose_stays_put() {
        let (scene, poses, images, k) = fixture();
        let solved = solve_target_pose(
            &scene,
            &images[1],
            &k,
            &poses[1],
            &SolveConfig { iters: 20, lr: 0.001 },
            &RenderConfig::default(),
        )
        .unwrap();
        assert!(solved.converged);
        assert!(solved.final_loss < 1e-8, "loss at truth {}", solved.final_loss);
        let drift = rotation_angle(&(poses[1].rotation.transpose() * solved.pose.rotation));
        assert!(drift < 2e-3, "drift {drift}");
    }

    #[test]
    fn empty_scene_is_rejected() {
        let (_, poses, images, k) = fixture();
        let empty = GlobalScene::default();
        let err = solve_target_pose(
            &empty,
            &images[0],
            &k,
            &poses[0],
            &SolveConfig::default(),
            &RenderConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::EmptyScene));
        let err = post_optimize(
            &empty,
            &poses,
            &images,
            &k,
            &PostOptConfig::default(),
            &RenderConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::EmptyScene));
    }
}
