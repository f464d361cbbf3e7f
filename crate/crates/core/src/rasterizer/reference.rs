//! Brute-force reference renderer.
//!
//! Deliberately naive: every pixel walks every splat (no tiles, no bounding
//! radii) in global depth order, evaluating the compositing rules straight
//! from their definitions. The tiled renderer must agree with this pixelwise;
//! keeping the two code paths separate is the point, so nothing here reuses
//! the production renderer's preparation or binning.

use nalgebra::{Vector2, Vector3};

use super::{ImageBuffer, RenderConfig, ALPHA_CAP, LOW_PASS_FLOOR};
use crate::gaussians::GlobalScene;
use crate::geometry::{CameraIntrinsics, CameraPose};

/// Per-pixel compositing diagnostics for conservation checks.
#[derive(Debug, Clone)]
pub struct CompositingAudit {
    /// Transmittance left after compositing each pixel.
    pub final_transmittance: Vec<f64>,
    /// Sum of `alpha_i * T_i` over the composited splats of each pixel.
    pub accumulated_weight: Vec<f64>,
}

/// Renders with the same math as [`super::render`] but one pixel at a time
/// over the full splat list.
pub fn render_reference(
    scene: &GlobalScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> ImageBuffer {
    render_reference_audited(scene, pose, k, cfg).0
}

/// As [`render_reference`], additionally reporting per-pixel transmittance
/// and accumulated weight (their sum must be 1 wherever compositing ran to
/// completion or stopped early -- the background takes the remainder).
pub fn render_reference_audited(
    scene: &GlobalScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> (ImageBuffer, CompositingAudit) {
    // Project every splat from first principles.
    struct Flat {
        mean_px: Vector2<f64>,
        inv: [f64; 3], // (ixx, ixy, iyy) of the image covariance inverse
        depth: f64,
        opacity: f64,
        color: Vector3<f64>,
    }
    let w = pose.rotation.transpose();
    let mut flats: Vec<Flat> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    for g in &scene.gaussians {
        let x_c = w * (g.mean - pose.translation);
        if !(x_c.z > cfg.near_plane && x_c.z <= cfg.far_plane) {
            continue;
        }
        let sigma_cam = w * g.covariance() * w.transpose();
        let z = x_c.z;
        // J rows: d(u)/d(x_c) and d(v)/d(x_c) of the pinhole projection.
        let j0 = Vector3::new(k.fx / z, 0.0, -k.fx * x_c.x / (z * z));
        let j1 = Vector3::new(0.0, k.fy / z, -k.fy * x_c.y / (z * z));
        let axx = (j0.transpose() * sigma_cam * j0)[(0, 0)] + LOW_PASS_FLOOR;
        let axy = (j0.transpose() * sigma_cam * j1)[(0, 0)];
        let ayy = (j1.transpose() * sigma_cam * j1)[(0, 0)] + LOW_PASS_FLOOR;
        let det = axx * ayy - axy * axy;
        order.push(flats.len());
        flats.push(Flat {
            mean_px: Vector2::new(k.fx * x_c.x / z + k.cx, k.fy * x_c.y / z + k.cy),
            inv: [ayy / det, -axy / det, axx / det],
            depth: z,
            opacity: g.opacity,
            color: g.color,
        });
    }
    // Front to back; survivors kept their input order, which provides the
    // stable tie-break.
    order.sort_by(|&a, &b| flats[a].depth.partial_cmp(&flats[b].depth).unwrap().then(a.cmp(&b)));

    let mut img = ImageBuffer::zeros(k.width, k.height);
    let npix = (k.width * k.height) as usize;
    let mut audit = CompositingAudit {
        final_transmittance: vec![1.0; npix],
        accumulated_weight: vec![0.0; npix],
    };
    for y in 0..k.height {
        for x in 0..k.width {
            let cx = x as f64 + 0.5;
            let cy = y as f64 + 0.5;
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            let mut weight = 0.0;
            for &i in &order {
                let f = &flats[i];
                let dx = cx - f.mean_px.x;
                let dy = cy - f.mean_px.y;
                let q = f.inv[0] * dx * dx + 2.0 * f.inv[1] * dx * dy + f.inv[2] * dy * dy;
                let alpha = (f.opacity * (-0.5 * q).exp()).min(ALPHA_CAP);
                if alpha < cfg.alpha_floor {
                    continue;
                }
                c += f.color * (alpha * t);
                weight += alpha * t;
                t *= 1.0 - alpha;
                if t < cfg.transmittance_stop {
                    break;
                }
            }
            c += cfg.background * t;
            img.set_pixel(x, y, c.map(|v| v.clamp(0.0, 1.0)));
            let at = (y * k.width + x) as usize;
            audit.final_transmittance[at] = t;
            audit.accumulated_weight[at] = weight;
        }
    }
    (img, audit)
}
