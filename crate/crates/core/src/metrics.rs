//! Image- and pose-quality metrics: PSNR, windowed SSIM (with an analytic
//! gradient so it can double as a loss term), pairwise relative-pose errors,
//! and threshold-integrated pose recall (AUC).

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{relative_pose, rotation_angle, CameraPose};
use crate::rasterizer::ImageBuffer;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image shapes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ShapeMismatch { a_w: u32, a_h: u32, b_w: u32, b_h: u32 },
    #[error("image {w}x{h} is smaller than the {window}x{window} ssim window")]
    ImageTooSmall { w: u32, h: u32, window: u32 },
    #[error("pose lists differ in length: {pred} vs {gt}")]
    PoseCountMismatch { pred: usize, gt: usize },
    #[error("need at least 2 poses for pairwise errors, got {0}")]
    TooFewPoses(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// Below this mean squared error PSNR is reported as the cap value.
pub const PSNR_MSE_FLOOR: f64 = 1e-10;
/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for images with unit peak value.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    check_shapes(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

pub const SSIM_WINDOW: u32 = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean structural similarity over all fully-contained 11x11 windows
/// (Gaussian-weighted, sigma 1.5), averaged over the three channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// As [`ssim`], also returning `d(ssim)/d(a)` as an image-shaped buffer.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer), MetricsError> {
    ssim_impl(a, b, true).map(|(s, g)| (s, g.expect("gradient requested")))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW as usize] {
    let mut k = [0.0; SSIM_WINDOW as usize];
    let c = (SSIM_WINDOW / 2) as i64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as i64 - c;
        *v = (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-region Gaussian-weighted window mean of `plane` (width `w`), output
/// size `(w - 10) * (h - 10)`.
fn window_means(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let win = SSIM_WINDOW as usize;
    let ow = w - win + 1;
    let oh = h - win + 1;
    // Separable: horizontal pass then vertical pass.
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                s += kv * plane[y * w + x + t];
            }
            horiz[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                s += kv * horiz[(y + t) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`window_means`]: scatters a valid-region map back onto the
/// full image grid with the same weights.
fn window_means_adjoint(map: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let win = SSIM_WINDOW as usize;
    let ow = w - win + 1;
    let oh = h - win + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = map[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (t, kv) in kernel.iter().enumerate() {
                horiz[(y + t) * ow + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = horiz[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (t, kv) in kernel.iter().enumerate() {
                out[y * w + x + t] += kv * g;
            }
        }
    }
    out
}

fn ssim_impl(
    a: &ImageBuffer,
    b: &ImageBuffer,
    with_grad: bool,
) -> Result<(f64, Option<ImageBuffer>), MetricsError> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall { w: a.width, h: a.height, window: SSIM_WINDOW });
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let ow = w - SSIM_WINDOW as usize + 1;
    let oh = h - SSIM_WINDOW as usize + 1;
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);

    let mut total = 0.0;
    let mut grad = with_grad.then(|| ImageBuffer::zeros(a.width, a.height));
    let n_windows = (ow * oh * 3) as f64;

    for ch in 0..3 {
        let xa: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let xb: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xa2: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let xb2: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let xab: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| p * q).collect();

        let mu_a = window_means(&xa, w, h, &kernel);
        let mu_b = window_means(&xb, w, h, &kernel);
        let m_aa = window_means(&xa2, w, h, &kernel);
        let m_bb = window_means(&xb2, w, h, &kernel);
        let m_ab = window_means(&xab, w, h, &kernel);

        // Per-window score and, if requested, derivative maps.
        let mut d_mu_a = with_grad.then(|| vec![0.0; ow * oh]);
        let mut d_m_aa = with_grad.then(|| vec![0.0; ow * oh]);
        let mut d_m_ab = with_grad.then(|| vec![0.0; ow * oh]);
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma; // sigma_a^2
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let n1 = 2.0 * ma * mb + c1;
            let n2 = 2.0 * cov + c2;
            let d1 = ma * ma + mb * mb + c1;
            let d2 = va + vb + c2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if let (Some(dm), Some(daa), Some(dab)) =
                (d_mu_a.as_mut(), d_m_aa.as_mut(), d_m_ab.as_mut())
            {
                // ds/d(mu_a) holding the raw moments fixed, then fold in the
                // mu_a-dependence of va and cov.
                let ds_dn1 = n2 / (d1 * d2);
                let ds_dn2 = n1 / (d1 * d2);
                let ds_dd1 = -s / d1;
                let ds_dd2 = -s / d2;
                let ds_dva = ds_dd2;
                let ds_dcov = 2.0 * ds_dn2;
                let ds_dmu = 2.0 * mb * ds_dn1 + 2.0 * ma * ds_dd1
                    - 2.0 * ma * ds_dva
                    - mb * ds_dcov;
                dm[i] = ds_dmu / n_windows;
                daa[i] = ds_dva / n_windows;
                dab[i] = ds_dcov / n_windows;
            }
        }
        if let (Some(dm), Some(daa), Some(dab), Some(gimg)) =
            (d_mu_a.as_ref(), d_m_aa.as_ref(), d_m_ab.as_ref(), grad.as_mut())
        {
            // dL/da = G^T dm + 2 a . (G^T daa) + b . (G^T dab), with G^T the
            // window-mean adjoint.
            let back_mu = window_means_adjoint(dm, w, h, &kernel);
            let back_aa = window_means_adjoint(daa, w, h, &kernel);
            let back_ab = window_means_adjoint(dab, w, h, &kernel);
            for i in 0..w * h {
                gimg.data[i * 3 + ch] = back_mu[i] + 2.0 * xa[i] * back_aa[i] + xb[i] * back_ab[i];
            }
        }
    }
    Ok((total / n_windows, grad))
}

// ---------------------------------------------------------------------------
// Pose errors and AUC
// ---------------------------------------------------------------------------

/// Relative-pose discrepancy for one ordered view pair.
#[derive(Debug, Clone, Copy)]
pub struct PosePairError {
    pub i: usize,
    pub j: usize,
    /// Geodesic rotation error, degrees.
    pub rotation_deg: f64,
    /// Angle between relative-translation directions, degrees.
    pub translation_deg: f64,
}

/// Norm below which a relative translation is treated as zero baseline.
const BASELINE_EPS: f64 = 1e-8;

/// Relative-pose errors over all ordered pairs `i != j`, comparing predicted
/// against ground-truth relative transforms. Translation error is the angle
/// between directions; if exactly one of the two baselines is (near) zero it
/// is 180 degrees, if both are it is 0.
pub fn pose_errors(
    pred: &[CameraPose],
    gt: &[CameraPose],
) -> Result<Vec<PosePairError>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::PoseCountMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooFewPoses(pred.len()));
    }
    let mut out = Vec::with_capacity(pred.len() * (pred.len() - 1));
    for i in 0..pred.len() {
        for j in 0..pred.len() {
            if i == j {
                continue;
            }
            let rp = relative_pose(&pred[i], &pred[j]);
            let rg = relative_pose(&gt[i], &gt[j]);
            let rotation_deg =
                rotation_angle(&(rg.rotation.transpose() * rp.rotation)).to_degrees();
            let translation_deg = translation_angle_deg(&rp.translation, &rg.translation);
            out.push(PosePairError { i, j, rotation_deg, translation_deg });
        }
    }
    Ok(out)
}

fn translation_angle_deg(pred: &Vector3<f64>, gt: &Vector3<f64>) -> f64 {
    let (np, ng) = (pred.norm(), gt.norm());
    match (np < BASELINE_EPS, ng < BASELINE_EPS) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 180.0,
        (false, false) => {
            let cos = (pred.dot(gt) / (np * ng)).clamp(-1.0, 1.0);
            cos.acos().to_degrees()
        }
    }
}

/// How to collapse a rotation/translation error pair into one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorAggregation {
    /// `max(rotation, translation)` -- the default.
    MaxRotTrans,
    RotationOnly,
}

/// Scalar per-pair errors under the chosen aggregation.
pub fn aggregate_pair_errors(pairs: &[PosePairError], agg: ErrorAggregation) -> Vec<f64> {
    pairs
        .iter()
        .map(|p| match agg {
            ErrorAggregation::MaxRotTrans => p.rotation_deg.max(p.translation_deg),
            ErrorAggregation::RotationOnly => p.rotation_deg,
        })
        .collect()
}

pub const DEFAULT_AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

/// Area under the recall-vs-threshold step curve, normalized to `[0, 1]`,
/// for each threshold.
///
/// The empirical recall is a step function, so the integral has the closed
/// form `sum_i max(0, T - e_i) / (n T)`; this is exact, not a quadrature.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty("pose error list"));
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| errors.iter().map(|&e| (t - e).max(0.0)).sum::<f64>() / (n * t))
        .collect())
}

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::ShapeMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    Ok(())
}
