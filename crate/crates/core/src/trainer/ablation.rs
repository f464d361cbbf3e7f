//! Frozen ablation suites: the forcing-mode grid and the scene-normalization
//! grid, each a fixed set of synthetic scenes trained under every arm of the
//! comparison. The suite definitions live here — not in the CLI — so that the
//! regression tests and the command-line runner measure exactly the same
//! thing.
//!
//! Both suites are deliberately hostile in different ways. The forcing suite
//! injects heavy pose noise into the per-view pose initialization (an
//! untrained-predictor regime: initial guesses are barely better than
//! random), which is what separates the curricula: always consuming
//! ground-truth poses trains a scene that has never seen its own rig, always
//! consuming predictions conditions early geometry on garbage, and the
//! ramped mixture gets clean geometry first and honest pose feedback later.
//! The normalization suite instead re-expresses each scene at a random
//! global scale in [0.1, 10) with a large world offset, so any strategy that
//! fails to bring camera spacing to a common scale leaves the depth-1.0
//! splat initialization pointing at empty space.
//!
//! Every run is deterministic given its `(arm, scene_seed)` key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{ForcingMode, ForcingSchedule};
use crate::geometry::NormalizationStrategy;
use crate::losses::LossWeights;

use super::synth::{apply_global_similarity, generate_scene, SceneSpec};
use super::{train, TrainConfig, TrainError, TrainSummary};

/// Scenes per suite. The forcing grid is 3 arms x 10 scenes, the
/// normalization grid 4 arms x 6 scenes; both finish within their runtime
/// budgets on one core.
pub const FORCING_SUITE_SCENES: u64 = 10;
pub const NORMALIZATION_SUITE_SCENES: u64 = 6;

/// Regression margins in dB, frozen from the first validated run of each
/// suite. An ordering check passes when `lhs >= rhs + margin`; margins
/// are set to roughly half the gap measured in that run, so a regression
/// that erodes most of the effect fails while ordinary seed-to-seed
/// jitter does not.
///
/// Measured gaps in the freezing runs (mean over the fixed suite):
/// forcing (10 scenes): mix pf 21.13 vs teacher pf 19.09 (+2.04),
/// mix pf 21.13 vs self pf 19.80 (+1.33), teacher pd 29.05 vs self
/// pd 15.88 (+13.17); normalization (6 scenes): max-pair pd 28.81 vs
/// mean-pair pd 27.22 (+1.59), mean-pair pd 27.22 vs
/// max(max-trans 24.30, none 18.68) (+2.93).
pub const FORCING_MARGIN_MIX_OVER_TEACHER_PF_DB: f64 = 1.0;
pub const FORCING_MARGIN_MIX_OVER_SELF_PF_DB: f64 = 0.6;
pub const FORCING_MARGIN_TEACHER_OVER_SELF_PD_DB: f64 = 6.0;
pub const NORM_MARGIN_MAXPAIR_OVER_MEANPAIR_DB: f64 = 0.75;
pub const NORM_MARGIN_MEANPAIR_OVER_REST_DB: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    Forcing,
    Normalization,
}

impl std::fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AblationSuite::Forcing => write!(f, "forcing"),
            AblationSuite::Normalization => write!(f, "normalization"),
        }
    }
}

/// The three forcing arms, in report order.
pub const FORCING_ARMS: [ForcingMode; 3] =
    [ForcingMode::Teacher, ForcingMode::SelfForcing, ForcingMode::Mix];

/// The four normalization arms, in report order.
pub const NORMALIZATION_ARMS: [NormalizationStrategy; 4] = [
    NormalizationStrategy::MaxPairwise,
    NormalizationStrategy::MeanPairwise,
    NormalizationStrategy::MaxTranslation,
    NormalizationStrategy::None,
];

pub fn arm_name_forcing(mode: ForcingMode) -> &'static str {
    match mode {
        ForcingMode::Teacher => "teacher",
        ForcingMode::SelfForcing => "self",
        ForcingMode::Mix => "mix",
    }
}

pub fn arm_name_normalization(strategy: NormalizationStrategy) -> &'static str {
    match strategy {
        NormalizationStrategy::MaxPairwise => "max-pair",
        NormalizationStrategy::MeanPairwise => "mean-pair",
        NormalizationStrategy::MaxTranslation => "max-trans",
        NormalizationStrategy::None => "none",
    }
}

/// Scene recipe shared by both suites: six context cameras on the arc,
/// thirty Gaussians. Dense enough that a per-view cloud cannot pass itself
/// off as the whole scene — with sparser content every context view could
/// model everything and a pose-free solver would simply lock onto the
/// nearest single cloud, hiding rig errors entirely.
fn suite_spec(seed: u64) -> SceneSpec {
    SceneSpec { num_views: 6, num_gaussians: 30, seed, ..SceneSpec::default() }
}

pub fn forcing_suite_spec(scene_seed: u64) -> SceneSpec {
    suite_spec(scene_seed)
}

/// Pose-noise injection for the forcing suite: rotation errors up to 60
/// degrees and translation errors of about the camera spacing, i.e. the
/// starting accuracy of a predictor that has not yet learned pose at all.
/// With mild noise every curriculum converges the rig through the pose loss
/// alone and the arms tie; the ordering being tested only exists when
/// training starts from predictor-quality poses.
pub fn forcing_suite_train_config(scene_seed: u64) -> TrainConfig {
    TrainConfig {
        pose_noise_rot: 60f64.to_radians(),
        pose_noise_trans: 1.0,
        train_seed: scene_seed,
        ..TrainConfig::default()
    }
}

/// One schedule for all arms: the ramp reaches probability 1.0 over steps
/// 100..500. Teacher and self-forcing ignore it; the mix arm spends its
/// early steps on ground-truth poses and finishes fully self-conditioned.
pub fn forcing_suite_schedule(mode: ForcingMode, scene_seed: u64) -> ForcingSchedule {
    ForcingSchedule { mode, t_start: 100, t_end: 500, ratio_r: 1.0, rng_seed: scene_seed }
}

/// Runs one cell of the forcing grid.
pub fn run_forcing_cell(mode: ForcingMode, scene_seed: u64) -> Result<TrainSummary, TrainError> {
    run_forcing_cell_with_steps(mode, scene_seed, None)
}

/// As [`run_forcing_cell`], with an optional step-count override for smoke
/// tests; the override also truncates the pose-free solver budget, because
/// an override run validates plumbing, not science. The frozen suite always
/// runs with `steps: None`.
pub fn run_forcing_cell_with_steps(
    mode: ForcingMode,
    scene_seed: u64,
    steps: Option<u64>,
) -> Result<TrainSummary, TrainError> {
    let scene = generate_scene(&forcing_suite_spec(scene_seed))?;
    let mut cfg = forcing_suite_train_config(scene_seed);
    let mut schedule = forcing_suite_schedule(mode, scene_seed);
    if let Some(s) = steps {
        cfg.steps = s;
        cfg.solve_iters = cfg.solve_iters.min(10);
        schedule.t_start = schedule.t_start.min(s / 2);
        schedule.t_end = s.max(schedule.t_start + 1);
    }
    let (_, report) = train(&scene, &schedule, &LossWeights::default(), NormalizationStrategy::MaxPairwise, &cfg)?;
    Ok(report.summary)
}

pub fn normalization_suite_spec(scene_seed: u64) -> SceneSpec {
    suite_spec(scene_seed)
}

/// The global scale for a normalization-suite scene: the midpoint of stratum
/// `seed mod N` when [0.1, 10) is split into one equal stratum per suite
/// scene (0.925, 2.575, ..., 9.175 for N = 6). A deterministic ladder is the
/// honest six-sample stand-in for "uniform over [0.1, 10)": six random draws
/// routinely miss the entire shrunk (< 1) regime, which is exactly where an
/// unnormalized depth prior fails in the opposite direction.
pub fn normalization_suite_scale(scene_seed: u64) -> f64 {
    let width = (10.0 - 0.1) / NORMALIZATION_SUITE_SCENES as f64;
    0.1 + width * (scene_seed % NORMALIZATION_SUITE_SCENES) as f64 + width / 2.0
}

/// Builds a normalization-suite scene: the base synthetic scene re-expressed
/// at its stratum's global scale and displaced by 2.5..7.5 scene radii in a
/// random direction. The offset matters as much as the scale —
/// camera-center *norms* become unrelated to camera *spacing*, which is
/// exactly what breaks max-translation normalization.
pub fn normalization_suite_scene(scene_seed: u64) -> Result<super::SyntheticScene, TrainError> {
    let base = generate_scene(&normalization_suite_spec(scene_seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + scene_seed);
    let scale = normalization_suite_scale(scene_seed);
    let dir = loop {
        let v = nalgebra::Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            break v / v.norm();
        }
    };
    let offset = dir * rng.random_range(1.0..3.0) * 2.5 * scale;
    Ok(apply_global_similarity(&base, &nalgebra::Matrix3::identity(), &offset, scale))
}

/// Normalization runs keep the default mild pose noise but truncate the
/// pose-free solver: the suite's verdict metric is pose-dependent PSNR
/// (which never touches the solver), so the pose-free columns are reported
/// at reduced accuracy rather than paid for at full price.
pub fn normalization_suite_train_config(scene_seed: u64) -> TrainConfig {
    TrainConfig { train_seed: scene_seed, solve_iters: 20, ..TrainConfig::default() }
}

/// Teacher-mode schedule with a small late predicted-pose tail; the
/// curriculum is not what this suite varies.
pub fn normalization_suite_schedule(scene_seed: u64) -> ForcingSchedule {
    ForcingSchedule {
        mode: ForcingMode::Teacher,
        t_start: 300,
        t_end: 500,
        ratio_r: 0.1,
        rng_seed: scene_seed,
    }
}

/// Runs one cell of the normalization grid.
pub fn run_normalization_cell(
    strategy: NormalizationStrategy,
    scene_seed: u64,
) -> Result<TrainSummary, TrainError> {
    run_normalization_cell_with_steps(strategy, scene_seed, None)
}

/// As [`run_normalization_cell`], with an optional step-count override for
/// smoke tests (see [`run_forcing_cell_with_steps`]). The frozen suite
/// always runs with `steps: None`.
pub fn run_normalization_cell_with_steps(
    strategy: NormalizationStrategy,
    scene_seed: u64,
    steps: Option<u64>,
) -> Result<TrainSummary, TrainError> {
    let scene = normalization_suite_scene(scene_seed)?;
    let mut cfg = normalization_suite_train_config(scene_seed);
    let mut schedule = normalization_suite_schedule(scene_seed);
    if let Some(s) = steps {
        cfg.steps = s;
        cfg.solve_iters = cfg.solve_iters.min(10);
        schedule.t_start = schedule.t_start.min(s / 2);
        schedule.t_end = s.max(schedule.t_start + 1);
    }
    let (_, report) = train(&scene, &schedule, &LossWeights::default(), strategy, &cfg)?;
    Ok(report.summary)
}

/// Per-arm aggregate over the suite's scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: u64,
    pub mean_pose_dependent_psnr: f64,
    pub mean_pose_dependent_ssim: f64,
    pub mean_pose_free_psnr: f64,
    pub mean_pose_free_ssim: f64,
    /// Mean pose AUC at the default thresholds, in report order.
    pub mean_pose_auc: Vec<f64>,
    pub solve_failures: u64,
}

pub fn summarize_arm(arm: impl Into<String>, runs: &[TrainSummary]) -> ArmSummary {
    assert!(!runs.is_empty(), "arm summary over zero runs");
    let n = runs.len() as f64;
    let mean = |f: fn(&TrainSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let auc_len = runs[0].pose_auc_deg.len();
    let mean_pose_auc = (0..auc_len)
        .map(|i| runs.iter().map(|r| r.pose_auc_deg[i]).sum::<f64>() / n)
        .collect();
    ArmSummary {
        arm: arm.into(),
        runs: runs.len() as u64,
        mean_pose_dependent_psnr: mean(|r| r.pose_dependent_psnr),
        mean_pose_dependent_ssim: mean(|r| r.pose_dependent_ssim),
        mean_pose_free_psnr: mean(|r| r.pose_free_psnr),
        mean_pose_free_ssim: mean(|r| r.pose_free_ssim),
        mean_pose_auc,
        solve_failures: runs.iter().map(|r| r.solve_failures as u64).sum(),
    }
}

/// One ordering assertion over arm aggregates: `lhs >= rhs + margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

fn check(name: impl Into<String>, lhs: f64, rhs: f64, margin: f64) -> OrderingCheck {
    OrderingCheck { name: name.into(), lhs, rhs, margin, pass: lhs >= rhs + margin }
}

/// The forcing suite's verdicts: the mixed curriculum must beat both pure
/// curricula on pose-free PSNR, and teacher forcing must beat pure
/// self-forcing on pose-dependent PSNR (clean geometry is exactly what
/// teacher forcing buys).
pub fn forcing_ordering_checks(
    teacher: &ArmSummary,
    self_forcing: &ArmSummary,
    mix: &ArmSummary,
) -> Vec<OrderingCheck> {
    vec![
        check(
            "pose_free_psnr: mix >= teacher",
            mix.mean_pose_free_psnr,
            teacher.mean_pose_free_psnr,
            FORCING_MARGIN_MIX_OVER_TEACHER_PF_DB,
        ),
        check(
            "pose_free_psnr: mix >= self",
            mix.mean_pose_free_psnr,
            self_forcing.mean_pose_free_psnr,
            FORCING_MARGIN_MIX_OVER_SELF_PF_DB,
        ),
        check(
            "pose_dependent_psnr: teacher >= self",
            teacher.mean_pose_dependent_psnr,
            self_forcing.mean_pose_dependent_psnr,
            FORCING_MARGIN_TEACHER_OVER_SELF_PD_DB,
        ),
    ]
}

/// The normalization suite's verdicts on pose-dependent PSNR:
/// max-pairwise >= mean-pairwise >= max(max-translation, none).
pub fn normalization_ordering_checks(
    max_pair: &ArmSummary,
    mean_pair: &ArmSummary,
    max_trans: &ArmSummary,
    none: &ArmSummary,
) -> Vec<OrderingCheck> {
    let rest = max_trans.mean_pose_dependent_psnr.max(none.mean_pose_dependent_psnr);
    vec![
        check(
            "pose_dependent_psnr: max-pair >= mean-pair",
            max_pair.mean_pose_dependent_psnr,
            mean_pair.mean_pose_dependent_psnr,
            NORM_MARGIN_MAXPAIR_OVER_MEANPAIR_DB,
        ),
        check(
            "pose_dependent_psnr: mean-pair >= max(max-trans, none)",
            mean_pair.mean_pose_dependent_psnr,
            rest,
            NORM_MARGIN_MEANPAIR_OVER_REST_DB,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_cells_are_deterministic() {
        let a = run_forcing_cell_with_steps(ForcingMode::Teacher, 0, Some(8)).unwrap();
        let b = run_forcing_cell_with_steps(ForcingMode::Teacher, 0, Some(8)).unwrap();
        assert_eq!(a.pose_dependent_psnr.to_bits(), b.pose_dependent_psnr.to_bits());
        assert_eq!(a.final_total_loss.to_bits(), b.final_total_loss.to_bits());
    }

    #[test]
    fn normalization_scene_draw_is_deterministic_and_scaled() {
        let a = normalization_suite_scene(2).unwrap();
        let b = normalization_suite_scene(2).unwrap();
        assert_eq!(a.gt_poses[0].translation, b.gt_poses[0].translation);
        // The transform must actually move the scene away from the origin
        // frame the base generator uses.
        let base = generate_scene(&normalization_suite_spec(2)).unwrap();
        let moved = (a.gt_poses[0].center() - base.gt_poses[0].center()).norm();
        assert!(moved > 0.5, "similarity transform barely moved the scene: {moved}");
    }

    #[test]
    fn scales_span_the_sampling_range() {
        // Stratification guarantees coverage: the first stratum tops out at
        // 0.1 + 9.9/N and the last starts at 10 - 9.9/N.
        let width = 9.9 / NORMALIZATION_SUITE_SCENES as f64;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for seed in 0..NORMALIZATION_SUITE_SCENES {
            let s = normalization_suite_scale(seed);
            assert!((0.1..10.0).contains(&s), "scale {s} outside the sampling range");
            lo = lo.min(s);
            hi = hi.max(s);
        }
        assert!(lo < 0.1 + width, "smallest sampled scale {lo} not in the shrunk regime");
        assert!(hi > 10.0 - width, "largest sampled scale {hi} not in the grown regime");
    }

    #[test]
    fn ordering_checks_compare_with_margin() {
        let mk = |pd: f64, pf: f64| ArmSummary {
            arm: "x".into(),
            runs: 1,
            mean_pose_dependent_psnr: pd,
            mean_pose_dependent_ssim: 0.9,
            mean_pose_free_psnr: pf,
            mean_pose_free_ssim: 0.9,
            mean_pose_auc: vec![0.5],
            solve_failures: 0,
        };
        let checks = forcing_ordering_checks(&mk(30.0, 20.0), &mk(16.0, 19.0), &mk(23.0, 21.0));
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        let bad = forcing_ordering_checks(&mk(30.0, 25.0), &mk(16.0, 19.0), &mk(23.0, 21.0));
        assert!(!bad[0].pass && bad[1].pass && bad[2].pass);

        let norm = normalization_ordering_checks(
            &mk(29.0, 0.0),
            &mk(27.0, 0.0),
            &mk(22.0, 0.0),
            &mk(16.0, 0.0),
        );
        assert!(norm.iter().all(|c| c.pass), "{norm:?}");
        let flipped = normalization_ordering_checks(
            &mk(26.0, 0.0),
            &mk(27.0, 0.0),
            &mk(22.0, 0.0),
            &mk(16.0, 0.0),
        );
        assert!(!flipped[0].pass);
    }

    #[test]
    fn arm_summary_averages() {
        let mk = |pd: f64| TrainSummary {
            num_steps: 1,
            final_total_loss: 0.0,
            pose_dependent_psnr: pd,
            pose_dependent_ssim: 1.0,
            pose_free_psnr: pd - 1.0,
            pose_free_ssim: 0.5,
            pose_auc_deg: vec![0.2, 0.4, 0.8],
            solve_failures: 1,
            source_counts: Default::default(),
            wall_clock_sec: 0.0,
        };
        let s = summarize_arm("teacher", &[mk(10.0), mk(20.0)]);
        assert_eq!(s.runs, 2);
        assert_eq!(s.mean_pose_dependent_psnr, 15.0);
        assert_eq!(s.mean_pose_free_psnr, 14.0);
        assert_eq!(s.mean_pose_auc, vec![0.2, 0.4, 0.8]);
        assert_eq!(s.solve_failures, 2);
    }
}
