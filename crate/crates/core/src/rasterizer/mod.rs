//! Differentiable tile-based splat rasterizer.
//!
//! Forward path: every splat is projected with the EWA approximation
//! (image-space covariance `J W Sigma W^T J^T` plus a fixed low-pass floor),
//! splats are sorted once by camera depth, binned into fixed-size pixel
//! tiles, and composited front to back per pixel with
//! `alpha = min(0.99, opacity * exp(-0.5 d^T A^-1 d))`.
//!
//! Backward path: analytic gradients of an arbitrary per-pixel loss with
//! respect to splat means (world frame), colors, opacities, and the render
//! camera's right-multiplied `so(3) (+) R^3` tangent. The mean and pose
//! gradients include the dependence of the EWA Jacobian on the camera-space
//! position, so they match central finite differences to first order.
//!
//! Rendering is deterministic: tiles are processed independently (possibly in
//! parallel) and each pixel accumulates in the fixed global depth order, so
//! results are bitwise reproducible regardless of thread count.

pub mod reference;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::gaussians::GlobalScene;
use crate::geometry::{vee, CameraIntrinsics, CameraPose};

/// Hard ceiling on per-splat alpha, matching common splat renderers.
pub const ALPHA_CAP: f64 = 0.99;

/// Low-pass floor (pixels^2) added to both image-space covariance diagonals
/// so sub-pixel splats still cover at least a pixel's footprint.
pub const LOW_PASS_FLOOR: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("gradient image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
}

/// Rendering parameters; `Default` gives the values used everywhere in this
/// crate unless a test needs otherwise.
#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub tile_size: u32,
    pub near_plane: f64,
    pub far_plane: f64,
    /// Contributions with alpha strictly below this are skipped.
    pub alpha_floor: f64,
    /// Per-pixel compositing stops once transmittance drops below this.
    pub transmittance_stop: f64,
    pub background: Vector3<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            near_plane: 0.01,
            far_plane: 1000.0,
            alpha_floor: 1.0 / 255.0,
            transmittance_stop: 1e-4,
            background: Vector3::zeros(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.tile_size == 0 {
            return Err(RenderError::InvalidConfig("tile_size must be >= 1".into()));
        }
        if !(self.near_plane > 0.0 && self.far_plane > self.near_plane) {
            return Err(RenderError::InvalidConfig(format!(
                "need 0 < near < far, got near={}, far={}",
                self.near_plane, self.far_plane
            )));
        }
        if !(0.0..1.0).contains(&self.alpha_floor) {
            return Err(RenderError::InvalidConfig(format!(
                "alpha_floor must be in [0, 1), got {}",
                self.alpha_floor
            )));
        }
        if !(self.transmittance_stop > 0.0 && self.transmittance_stop < 1.0) {
            return Err(RenderError::InvalidConfig(format!(
                "transmittance_stop must be in (0, 1), got {}",
                self.transmittance_stop
            )));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(RenderError::InvalidConfig(format!(
                "background must be in [0,1]^3, got {:?}",
                self.background
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Image buffer
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major RGB image with `f64` channels in `[0, 1]` (gradients reuse the
/// same container without the range convention).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    /// Length `width * height * 3`, layout `(y * width + x) * 3 + channel`.
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; (width * height * 3) as usize] }
    }

    pub fn filled(width: u32, height: u32, rgb: Vector3<f64>) -> Self {
        let mut img = Self::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px[0] = rgb.x;
            px[1] = rgb.y;
            px[2] = rgb.z;
        }
        img
    }

    pub fn pixel(&self, x: u32, y: u32) -> Vector3<f64> {
        let i = ((y * self.width + x) * 3) as usize;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: Vector3<f64>) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i] = rgb.x;
        self.data[i + 1] = rgb.y;
        self.data[i + 2] = rgb.z;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 8-bit PNG with plain linear quantization (no gamma).
    pub fn save_png(&self, path: &std::path::Path) -> Result<(), ImageIoError> {
        let mut out = image::RgbImage::new(self.width, self.height);
        for (x, y, p) in out.enumerate_pixels_mut() {
            let v = self.pixel(x, y);
            *p = image::Rgb([
                (v.x.clamp(0.0, 1.0) * 255.0).round() as u8,
                (v.y.clamp(0.0, 1.0) * 255.0).round() as u8,
                (v.z.clamp(0.0, 1.0) * 255.0).round() as u8,
            ]);
        }
        out.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self, ImageIoError> {
        let img = image::open(path)?.into_rgb8();
        let (width, height) = img.dimensions();
        let mut out = Self::zeros(width, height);
        for (x, y, p) in img.enumerate_pixels() {
            out.set_pixel(x, y, Vector3::new(
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// A splat after EWA projection into one camera.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedGaussian {
    /// Projected mean in continuous pixel coordinates.
    pub mean_px: Vector2<f64>,
    /// Image-space covariance (includes the low-pass floor).
    pub cov: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
}

/// Projects one splat; `None` means it was culled by the near/far planes.
pub fn project(
    gaussian: &crate::gaussians::Gaussian,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Option<ProjectedGaussian> {
    let x_c = pose.world_to_cam(&gaussian.mean);
    if !(x_c.z > cfg.near_plane && x_c.z <= cfg.far_plane) {
        return None;
    }
    let w = pose.rotation.transpose();
    let m = w * gaussian.covariance() * w.transpose();
    let j = ewa_jacobian(k, &x_c);
    let cov = j * m * j.transpose() + Matrix2::identity() * LOW_PASS_FLOOR;
    Some(ProjectedGaussian {
        mean_px: Vector2::new(
            k.fx * x_c.x / x_c.z + k.cx,
            k.fy * x_c.y / x_c.z + k.cy,
        ),
        cov,
        depth: x_c.z,
    })
}

/// Jacobian of the pinhole projection at a camera-space point.
fn ewa_jacobian(k: &CameraIntrinsics, x_c: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let z = x_c.z;
    nalgebra::Matrix2x3::new(
        k.fx / z, 0.0, -k.fx * x_c.x / (z * z),
        0.0, k.fy / z, -k.fy * x_c.y / (z * z),
    )
}

// ---------------------------------------------------------------------------
// Shared forward preparation
// ---------------------------------------------------------------------------

/// Everything the per-pixel loops need, cached once per (splat, camera).
struct Prepared {
    /// Index into the input scene.
    orig: usize,
    mean_px: Vector2<f64>,
    /// Inverse image covariance as (ixx, ixy, iyy).
    inv: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
    /// Conservative pixel-space radius: outside it alpha < alpha_floor.
    radius: f64,
    // Caches for the backward chain.
    x_c: Vector3<f64>,
    cov_cam: Matrix3<f64>,
}

/// Projects, culls, and depth-sorts the scene. Sorted front to back with the
/// original index as a stable tie-break.
fn prepare(
    scene: &GlobalScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Vec<Prepared> {
    let w = pose.rotation.transpose();
    let mut out: Vec<(f64, Prepared)> = Vec::with_capacity(scene.len());
    for (orig, g) in scene.gaussians.iter().enumerate() {
        // Splats that can never reach alpha_floor are dropped up front; the
        // per-pixel skip rule would reject every contribution anyway.
        if g.opacity < cfg.alpha_floor {
            continue;
        }
        let x_c = pose.world_to_cam(&g.mean);
        if !(x_c.z > cfg.near_plane && x_c.z <= cfg.far_plane) {
            continue;
        }
        let cov_cam = w * g.covariance() * w.transpose();
        let j = ewa_jacobian(k, &x_c);
        let a = j * cov_cam * j.transpose() + Matrix2::identity() * LOW_PASS_FLOOR;
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(0, 1)];
        let inv = [a[(1, 1)] / det, -a[(0, 1)] / det, a[(0, 0)] / det];
        // alpha >= floor requires |d|^2 <= 2 lambda_max ln(opacity / floor).
        let half_trace = 0.5 * (a[(0, 0)] + a[(1, 1)]);
        let disc = (0.5 * (a[(0, 0)] - a[(1, 1)])).powi(2) + a[(0, 1)] * a[(0, 1)];
        let lambda_max = half_trace + disc.sqrt();
        let radius = if cfg.alpha_floor > 0.0 {
            (2.0 * lambda_max * (g.opacity / cfg.alpha_floor).ln()).max(0.0).sqrt()
        } else {
            f64::INFINITY
        };
        out.push((
            x_c.z,
            Prepared {
                orig,
                mean_px: Vector2::new(k.fx * x_c.x / x_c.z + k.cx, k.fy * x_c.y / x_c.z + k.cy),
                inv,
                opacity: g.opacity,
                color: g.color,
                radius,
                x_c,
                cov_cam,
            },
        ));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.orig.cmp(&b.1.orig)));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Bins sorted splats into tiles; each tile's list stays in depth order.
fn bin_into_tiles(
    splats: &[Prepared],
    width: u32,
    height: u32,
    tile: u32,
) -> (u32, u32, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (slot, s) in splats.iter().enumerate() {
        // Pixel u's center is u + 0.5; solve |center - mean| <= radius.
        let u_min = (s.mean_px.x - s.radius - 0.5).ceil().max(0.0) as i64;
        let u_max = (s.mean_px.x + s.radius - 0.5).floor().min((width - 1) as f64) as i64;
        let v_min = (s.mean_px.y - s.radius - 0.5).ceil().max(0.0) as i64;
        let v_max = (s.mean_px.y + s.radius - 0.5).floor().min((height - 1) as f64) as i64;
        if u_min > u_max || v_min > v_max {
            continue;
        }
        for ty in (v_min as u32 / tile)..=(v_max as u32 / tile) {
            for tx in (u_min as u32 / tile)..=(u_max as u32 / tile) {
                bins[(ty * tiles_x + tx) as usize].push(slot as u32);
            }
        }
    }
    (tiles_x, tiles_y, bins)
}

// ---------------------------------------------------------------------------
// Forward render
// ---------------------------------------------------------------------------

/// Renders the scene into an RGB image.
///
/// Panics if `cfg` fails [`RenderConfig::validate`]; validate configs at the
/// boundary where they come from user input.
pub fn render(
    scene: &GlobalScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> ImageBuffer {
    cfg.validate().expect("invalid RenderConfig");
    let splats = prepare(scene, pose, k, cfg);
    let (tiles_x, _tiles_y, bins) = bin_into_tiles(&splats, k.width, k.height, cfg.tile_size);

    let tile_results: Vec<(u32, Vec<f64>)> = bins
        .par_iter()
        .enumerate()
        .map(|(tile_idx, bin)| {
            let tx = tile_idx as u32 % tiles_x;
            let ty = tile_idx as u32 / tiles_x;
            let x0 = tx * cfg.tile_size;
            let y0 = ty * cfg.tile_size;
            let x1 = (x0 + cfg.tile_size).min(k.width);
            let y1 = (y0 + cfg.tile_size).min(k.height);
            let mut pixels = vec![0.0; ((x1 - x0) * (y1 - y0) * 3) as usize];
            for y in y0..y1 {
                for x in x0..x1 {
                    let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = Vector3::zeros();
                    for &slot in bin {
                        let s = &splats[slot as usize];
                        let d = center - s.mean_px;
                        let q = s.inv[0] * d.x * d.x
                            + 2.0 * s.inv[1] * d.x * d.y
                            + s.inv[2] * d.y * d.y;
                        let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_CAP);
                        if alpha < cfg.alpha_floor {
                            continue;
                        }
                        c += s.color * (alpha * t);
                        t *= 1.0 - alpha;
                        if t < cfg.transmittance_stop {
                            break;
                        }
                    }
                    c += cfg.background * t;
                    let at = (((y - y0) * (x1 - x0) + (x - x0)) * 3) as usize;
                    pixels[at] = c.x.clamp(0.0, 1.0);
                    pixels[at + 1] = c.y.clamp(0.0, 1.0);
                    pixels[at + 2] = c.z.clamp(0.0, 1.0);
                }
            }
            (tile_idx as u32, pixels)
        })
        .collect();

    let mut img = ImageBuffer::zeros(k.width, k.height);
    for (tile_idx, pixels) in tile_results {
        let tx = tile_idx % tiles_x;
        let ty = tile_idx / tiles_x;
        let x0 = tx * cfg.tile_size;
        let y0 = ty * cfg.tile_size;
        let x1 = (x0 + cfg.tile_size).min(k.width);
        let y1 = (y0 + cfg.tile_size).min(k.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let at = (((y - y0) * (x1 - x0) + (x - x0)) * 3) as usize;
                img.set_pixel(x, y, Vector3::new(pixels[at], pixels[at + 1], pixels[at + 2]));
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

pub use crate::geometry::PoseTangent;

/// Gradients of a scalar loss with respect to scene and camera parameters;
/// entries for culled splats are zero. Splat scale/orientation gradients are
/// deliberately not produced (the optimization stages never move them
/// through the renderer).
#[derive(Debug, Clone)]
pub struct RenderGradients {
    pub d_mean: Vec<Vector3<f64>>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_opacity: Vec<f64>,
    /// Gradient for the render camera's pose.
    pub d_pose: PoseTangent,
}

/// Per-splat accumulator while walking a tile's pixels.
#[derive(Clone, Copy, Default)]
struct Acc {
    d_mean_px: Vector2<f64>,
    d_cov: Matrix2<f64>,
    d_opacity: f64,
    d_color: Vector3<f64>,
}

/// One composited contribution, recorded so the per-pixel backward walk can
/// run back to front.
#[derive(Clone, Copy)]
struct Contrib {
    pos: usize,
    alpha: f64,
    g: f64,
    t_before: f64,
    capped: bool,
}

/// Backpropagates `d_image` (dLoss/dPixel, same shape as the render) through
/// the rasterizer. Recomputes the forward pass internally, so it must be
/// called with exactly the inputs that produced the image being
/// differentiated.
pub fn render_backward(
    scene: &GlobalScene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
    d_image: &ImageBuffer,
) -> Result<RenderGradients, RenderError> {
    cfg.validate()?;
    if d_image.width != k.width || d_image.height != k.height {
        return Err(RenderError::DimensionMismatch {
            got_w: d_image.width,
            got_h: d_image.height,
            want_w: k.width,
            want_h: k.height,
        });
    }
    let splats = prepare(scene, pose, k, cfg);
    let (tiles_x, _tiles_y, bins) = bin_into_tiles(&splats, k.width, k.height, cfg.tile_size);

    // Per tile: accumulate gradients against the tile's own splat list, then
    // merge sequentially in tile order so the result is thread-count
    // independent.
    let tile_accs: Vec<(usize, Vec<Acc>)> = bins
        .par_iter()
        .enumerate()
        .map(|(tile_idx, bin)| {
            let tx = tile_idx as u32 % tiles_x;
            let ty = tile_idx as u32 / tiles_x;
            let x0 = tx * cfg.tile_size;
            let y0 = ty * cfg.tile_size;
            let x1 = (x0 + cfg.tile_size).min(k.width);
            let y1 = (y0 + cfg.tile_size).min(k.height);
            let mut accs = vec![Acc::default(); bin.len()];
            let mut contribs: Vec<Contrib> = Vec::with_capacity(bin.len());
            for y in y0..y1 {
                for x in x0..x1 {
                    let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    // Forward re-walk, recording each composited contribution.
                    contribs.clear();
                    let mut t = 1.0;
                    for (pos, &slot) in bin.iter().enumerate() {
                        let s = &splats[slot as usize];
                        let d = center - s.mean_px;
                        let q = s.inv[0] * d.x * d.x
                            + 2.0 * s.inv[1] * d.x * d.y
                            + s.inv[2] * d.y * d.y;
                        let g = (-0.5 * q).exp();
                        let raw = s.opacity * g;
                        let alpha = raw.min(ALPHA_CAP);
                        if alpha < cfg.alpha_floor {
                            continue;
                        }
                        contribs.push(Contrib {
                            pos,
                            alpha,
                            g,
                            t_before: t,
                            capped: raw > ALPHA_CAP,
                        });
                        t *= 1.0 - alpha;
                        if t < cfg.transmittance_stop {
                            break;
                        }
                    }
                    let upstream = d_image.pixel(x, y);
                    // Suffix color (weighted colors after the current splat,
                    // background included), built while walking backward.
                    let mut suffix = cfg.background * t;
                    for contrib in contribs.iter().rev() {
                        let s = &splats[bin[contrib.pos] as usize];
                        let acc = &mut accs[contrib.pos];
                        let weight = contrib.alpha * contrib.t_before;
                        acc.d_color += upstream * weight;
                        let d_alpha = upstream
                            .dot(&(s.color * contrib.t_before - suffix / (1.0 - contrib.alpha)));
                        suffix += s.color * weight;
                        if contrib.capped {
                            continue; // alpha pinned at the cap: zero subgradient
                        }
                        acc.d_opacity += d_alpha * contrib.g;
                        let d_g = d_alpha * s.opacity;
                        let d_q = d_g * (-0.5 * contrib.g);
                        let d = center - s.mean_px;
                        let v = Vector2::new(
                            s.inv[0] * d.x + s.inv[1] * d.y,
                            s.inv[1] * d.x + s.inv[2] * d.y,
                        );
                        // q = d^T A^-1 d: dq/dd = 2 v, dq/dA = -v v^T.
                        acc.d_mean_px += v * (-2.0 * d_q); // d(mean_px) = -d(d)
                        acc.d_cov += v * v.transpose() * (-d_q);
                    }
                }
            }
            (tile_idx, accs)
        })
        .collect();

    let mut per_splat = vec![Acc::default(); splats.len()];
    let mut ordered: Vec<_> = tile_accs;
    ordered.sort_by_key(|(idx, _)| *idx);
    for (tile_idx, accs) in ordered {
        for (pos, acc) in accs.into_iter().enumerate() {
            let slot = bins[tile_idx][pos] as usize;
            let dst = &mut per_splat[slot];
            dst.d_mean_px += acc.d_mean_px;
            dst.d_cov += acc.d_cov;
            dst.d_opacity += acc.d_opacity;
            dst.d_color += acc.d_color;
        }
    }

    // Chain per-splat image-space gradients back to world space and the
    // camera tangent.
    let n = scene.len();
    let mut grads = RenderGradients {
        d_mean: vec![Vector3::zeros(); n],
        d_color: vec![Vector3::zeros(); n],
        d_opacity: vec![0.0; n],
        d_pose: PoseTangent::default(),
    };
    let r = pose.rotation;
    for (s, acc) in splats.iter().zip(&per_splat) {
        let j = ewa_jacobian(k, &s.x_c);
        // Position path: mean_px = proj(x_c).
        let mut d_xc = j.transpose() * acc.d_mean_px;
        // Covariance path: A = J M J^T + floor. M-part first.
        let d_m = j.transpose() * acc.d_cov * j;
        // J depends on x_c as well: dA = dJ B + (dJ B)^T with B = M J^T.
        let b = s.cov_cam * j.transpose();
        let (fx, fy) = (k.fx, k.fy);
        let (xc, yc, zc) = (s.x_c.x, s.x_c.y, s.x_c.z);
        let z2 = zc * zc;
        let dj_list: [nalgebra::Matrix2x3<f64>; 3] = [
            nalgebra::Matrix2x3::new(0.0, 0.0, -fx / z2, 0.0, 0.0, 0.0),
            nalgebra::Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -fy / z2),
            nalgebra::Matrix2x3::new(
                -fx / z2, 0.0, 2.0 * fx * xc / (z2 * zc),
                0.0, -fy / z2, 2.0 * fy * yc / (z2 * zc),
            ),
        ];
        for (axis, dj) in dj_list.iter().enumerate() {
            let e = dj * b; // 2x2
            d_xc[axis] += 2.0 * (acc.d_cov.component_mul(&e)).sum();
        }
        grads.d_mean[s.orig] = r * d_xc;
        grads.d_color[s.orig] = acc.d_color;
        grads.d_opacity[s.orig] = acc.d_opacity;
        // Camera tangent. Translation: x_c = R^T (mu - t - dt).
        grads.d_pose.translation -= r * d_xc;
        // Rotation, position path: x_c(w) = exp(-hat(w)) x_c.
        grads.d_pose.rotation += d_xc.cross(&s.x_c);
        // Rotation, covariance path: M(w) = exp(-hat(w)) M exp(hat(w)).
        let comm = d_m * s.cov_cam - s.cov_cam * d_m;
        grads.d_pose.rotation += -2.0 * vee(&comm);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::Gaussian;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn lone_splat(mean: Vector3<f64>, opacity: f64, sigma: f64) -> GlobalScene {
        GlobalScene {
            gaussians: vec![Gaussian {
                mean,
                opacity,
                rotation: UnitQuaternion::identity(),
                log_scale: Vector3::from_element(sigma.ln()),
                color: Vector3::new(1.0, 0.0, 0.0),
            }],
            provenance: vec![0],
        }
    }

    fn basic_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.5, 32.5, 64, 64).unwrap()
    }

    #[test]
    fn empty_scene_renders_background() {
        let cfg = RenderConfig { background: Vector3::new(0.2, 0.4, 0.6), ..Default::default() };
        let img = render(&GlobalScene::default(), &CameraPose::identity(), &basic_intrinsics(), &cfg);
        for px in img.data.chunks_exact(3) {
            assert_eq!(px, [0.2, 0.4, 0.6]);
        }
    }

    #[test]
    fn optical_axis_projection() {
        let scene = lone_splat(Vector3::new(0.0, 0.0, 1.0), 0.9, 0.1);
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let p = project(&scene.gaussians[0], &CameraPose::identity(), &k, &RenderConfig::default())
            .unwrap();
        assert_relative_eq!(p.mean_px, Vector2::new(50.0, 50.0), epsilon = 1e-12);
        assert_relative_eq!(p.depth, 1.0, epsilon = 1e-12);
        // Isotropic sigma=0.1 at depth 1 with f=100: (f*sigma/z)^2 = 100 per
        // axis, plus the low-pass floor.
        assert_relative_eq!(p.cov[(0, 0)], 100.0 + LOW_PASS_FLOOR, epsilon = 1e-9);
        assert_relative_eq!(p.cov[(1, 1)], 100.0 + LOW_PASS_FLOOR, epsilon = 1e-9);
        assert_relative_eq!(p.cov[(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        let scene = lone_splat(Vector3::new(0.0, 0.0, -1.0), 0.9, 0.1);
        let p = project(
            &scene.gaussians[0],
            &CameraPose::identity(),
            &basic_intrinsics(),
            &RenderConfig::default(),
        );
        assert!(p.is_none());
    }

    #[test]
    fn opaque_splat_dominates_its_center_pixel() {
        // Mean projects exactly onto the center of pixel (32, 32).
        let scene = lone_splat(Vector3::new(0.0, 0.0, 1.0), 0.99, 0.05);
        let cfg = RenderConfig { background: Vector3::new(0.0, 0.0, 1.0), ..Default::default() };
        let img = render(&scene, &CameraPose::identity(), &basic_intrinsics(), &cfg);
        let px = img.pixel(32, 32);
        // alpha = 0.99 at zero offset: 0.99*red + 0.01*blue.
        assert_relative_eq!(px.x, 0.99, epsilon = 1e-9);
        assert_relative_eq!(px.z, 0.01, epsilon = 1e-9);
    }

    #[test]
    fn render_is_bitwise_deterministic() {
        let mut scene = GlobalScene::default();
        for i in 0..40 {
            let f = i as f64;
            scene.gaussians.push(Gaussian {
                mean: Vector3::new((f * 0.37).sin() * 0.4, (f * 0.51).cos() * 0.4, 1.0 + 0.01 * f),
                opacity: 0.3 + 0.01 * f,
                rotation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), f * 0.1),
                log_scale: Vector3::new(-3.0, -2.5, -2.8),
                color: Vector3::new(0.2, 0.5, 0.8),
            });
            scene.provenance.push(0);
        }
        let k = basic_intrinsics();
        let cfg = RenderConfig::default();
        let a = render(&scene, &CameraPose::identity(), &k, &cfg);
        let b = render(&scene, &CameraPose::identity(), &k, &cfg);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let scene = lone_splat(Vector3::new(0.0, 0.0, 1.0), 0.8, 0.05);
        let k = basic_intrinsics();
        let zeros = ImageBuffer::zeros(k.width, k.height);
        let g = render_backward(&scene, &CameraPose::identity(), &k, &RenderConfig::default(), &zeros)
            .unwrap();
        assert_eq!(g.d_mean[0], Vector3::zeros());
        assert_eq!(g.d_color[0], Vector3::zeros());
        assert_eq!(g.d_opacity[0], 0.0);
        assert_eq!(g.d_pose, PoseTangent::default());
    }

    #[test]
    fn color_gradient_equals_accumulated_weight() {
        // With upstream gradient all ones on one channel, dL/d(color) must be
        // the total composited weight of the splat.
        let scene = lone_splat(Vector3::new(0.0, 0.0, 1.0), 0.6, 0.05);
        let k = basic_intrinsics();
        let cfg = RenderConfig::default();
        let mut upstream = ImageBuffer::zeros(k.width, k.height);
        for px in upstream.data.chunks_exact_mut(3) {
            px[0] = 1.0;
        }
        let g = render_backward(&scene, &CameraPose::identity(), &k, &cfg, &upstream).unwrap();
        // Independent weight accounting: alpha at each pixel, single splat so
        // T before is always 1.
        let p = project(&scene.gaussians[0], &CameraPose::identity(), &k, &cfg).unwrap();
        let det = p.cov[(0, 0)] * p.cov[(1, 1)] - p.cov[(0, 1)] * p.cov[(0, 1)];
        let inv = [p.cov[(1, 1)] / det, -p.cov[(0, 1)] / det, p.cov[(0, 0)] / det];
        let mut weight = 0.0;
        for y in 0..k.height {
            for x in 0..k.width {
                let dx = x as f64 + 0.5 - p.mean_px.x;
                let dy = y as f64 + 0.5 - p.mean_px.y;
                let q = inv[0] * dx * dx + 2.0 * inv[1] * dx * dy + inv[2] * dy * dy;
                let alpha = (0.6 * (-0.5 * q).exp()).min(ALPHA_CAP);
                if alpha >= cfg.alpha_floor {
                    weight += alpha;
                }
            }
        }
        assert_relative_eq!(g.d_color[0].x, weight, epsilon = 1e-9);
        assert_eq!(g.d_color[0].y, 0.0);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let scene = lone_splat(Vector3::new(0.0, 0.0, 1.0), 0.8, 0.05);
        let k = basic_intrinsics();
        let bad = ImageBuffer::zeros(8, 8);
        let err = render_backward(&scene, &CameraPose::identity(), &k, &RenderConfig::default(), &bad)
            .unwrap_err();
        assert!(matches!(err, RenderError::DimensionMismatch { .. }));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = RenderConfig::default();
        cfg.alpha_floor = 1.0;
        assert!(cfg.validate().is_err());
        cfg = RenderConfig::default();
        cfg.transmittance_stop = 0.0;
        assert!(cfg.validate().is_err());
        cfg = RenderConfig::default();
        cfg.near_plane = -1.0;
        assert!(cfg.validate().is_err());
        cfg = RenderConfig::default();
        cfg.background = Vector3::new(2.0, 0.0, 0.0);
        assert!(cfg.validate().is_err());
    }
}
