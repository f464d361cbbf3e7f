//! Mix-forcing schedule: decides per training step whether Gaussian
//! aggregation uses predicted or ground-truth camera poses.
//!
//! The probability of using predicted poses ramps linearly from 0 (before
//! `t_start`) to `ratio_r` (at `t_end`). Draws are counter-based — keyed by
//! `(rng_seed, step)`, not by call order — so a decision can be recomputed
//! anywhere, any time, on any thread, and always comes out the same.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("schedule start {t_start} is after end {t_end}")]
    StartAfterEnd { t_start: u64, t_end: u64 },
    #[error("mixing ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
}

/// Which pose source the aggregation step consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoseSource {
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingMode {
    /// Always aggregate with ground-truth poses.
    Teacher,
    /// Always aggregate with the current predicted poses.
    #[serde(rename = "self")]
    SelfForcing,
    /// Scheduled Bernoulli mixture of the two.
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSchedule {
    /// First step at which the predicted-pose probability starts ramping.
    pub t_start: u64,
    /// Step at which the probability reaches `ratio_r` and stays there.
    pub t_end: u64,
    /// Final probability of drawing predicted poses in `Mix` mode.
    pub ratio_r: f64,
    pub mode: ForcingMode,
    pub rng_seed: u64,
}

impl Default for ForcingSchedule {
    fn default() -> Self {
        Self { t_start: 80_000, t_end: 100_000, ratio_r: 0.1, mode: ForcingMode::Mix, rng_seed: 0 }
    }
}

impl ForcingSchedule {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.t_start > self.t_end {
            return Err(CurriculumError::StartAfterEnd { t_start: self.t_start, t_end: self.t_end });
        }
        if !(0.0..=1.0).contains(&self.ratio_r) {
            return Err(CurriculumError::RatioOutOfRange(self.ratio_r));
        }
        Ok(())
    }
}

/// Probability that step `step` aggregates with predicted poses.
///
/// `Teacher` is constant 0, `SelfForcing` constant 1. `Mix` is 0 before
/// `t_start`, `ratio_r` at and after `t_end`, and ramps linearly between;
/// a schedule with `t_start == t_end` degenerates to a step function there.
pub fn predicted_pose_probability(s: &ForcingSchedule, step: u64) -> f64 {
    match s.mode {
        ForcingMode::Teacher => 0.0,
        ForcingMode::SelfForcing => 1.0,
        ForcingMode::Mix => {
            if step < s.t_start {
                0.0
            } else if step >= s.t_end {
                s.ratio_r
            } else {
                s.ratio_r * (step - s.t_start) as f64 / (s.t_end - s.t_start) as f64
            }
        }
    }
}

/// Bernoulli decision for one (scene, step): one draw shared by all views of
/// the scene so local Gaussians are never aggregated under mixed sources.
///
/// The generator is re-seeded from `rng_seed` with the step index as the
/// stream, so the outcome depends only on the key, never on call history.
pub fn choose_pose_source(s: &ForcingSchedule, step: u64) -> PoseSource {
    let p = predicted_pose_probability(s, step);
    // Skip the draw entirely at the constant endpoints so Teacher/Self modes
    // are exact regardless of floating-point comparison subtleties.
    if p <= 0.0 {
        return PoseSource::GroundTruth;
    }
    if p >= 1.0 {
        return PoseSource::Predicted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
    rng.set_stream(step);
    if rng.random::<f64>() < p {
        PoseSource::Predicted
    } else {
        PoseSource::GroundTruth
    }
}
