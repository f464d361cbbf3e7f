//! Differentiable Gaussian-splat rendering plus the scene-space machinery that
//! turns per-view ("local") splat predictions into a single global scene:
//! rotation handling, scene-scale normalization, a scheduled-sampling style
//! pose curriculum, losses, metrics, and a small direct-optimization trainer
//! used to exercise all of it on synthetic scenes.
//!
//! Everything is `f64` and CPU-only; scenes are deliberately desk-scale
//! (tens of views, thousands of splats) so that every numeric path can be
//! checked against brute-force references and finite differences.

pub mod curriculum;
pub mod gaussians;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod rasterizer;
pub mod scenefile;
pub mod trainer;

pub use gaussians::{Gaussian, GlobalScene, LocalScene};
pub use geometry::{CameraIntrinsics, CameraPose, NormalizationStrategy, Rotation9D};
pub use rasterizer::{ImageBuffer, RenderConfig};
