//! `localsplat`: generate synthetic splat scenes, train per-view
//! reconstructions under different pose curricula, render, score, prune,
//! refine, and run the frozen ablation grids.
//!
//! Exit codes: 0 success, 1 ablation ordering regression, 2 configuration
//! error, 3 i/o error, 4 numerical failure. The only environment knob is
//! `LOCALSPLAT_THREADS` (render thread count; for `ablate`, the worker-process
//! pool width).

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use localsplat_core::curriculum::ForcingMode;
use localsplat_core::geometry::NormalizationStrategy;

use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "localsplat",
    version,
    about = "Desk-scale Gaussian-splat reconstruction toolkit",
    after_help = "Exit codes: 0 ok, 1 ablation ordering regression, 2 config error, 3 i/o error, 4 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ForcingArg {
    /// Always aggregate with ground-truth poses.
    Teacher,
    /// Always aggregate with the current predicted poses.
    #[value(name = "self")]
    SelfForcing,
    /// Ground truth early, ramping to predicted poses by the final step.
    Mix,
}

impl From<ForcingArg> for ForcingMode {
    fn from(a: ForcingArg) -> Self {
        match a {
            ForcingArg::Teacher => ForcingMode::Teacher,
            ForcingArg::SelfForcing => ForcingMode::SelfForcing,
            ForcingArg::Mix => ForcingMode::Mix,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    /// Divide by the maximum pairwise camera-center distance.
    #[value(name = "max-pair")]
    MaxPair,
    /// Divide by the mean pairwise camera-center distance.
    #[value(name = "mean-pair")]
    MeanPair,
    /// Divide by the largest camera translation norm.
    #[value(name = "max-trans")]
    MaxTrans,
    /// No rescaling.
    None,
}

impl From<NormArg> for NormalizationStrategy {
    fn from(a: NormArg) -> Self {
        match a {
            NormArg::MaxPair => NormalizationStrategy::MaxPairwise,
            NormArg::MeanPair => NormalizationStrategy::MeanPairwise,
            NormArg::MaxTrans => NormalizationStrategy::MaxTranslation,
            NormArg::None => NormalizationStrategy::None,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene directory: cameras, ground-truth splat
    /// PLY, and PNG renders of every view.
    Synth {
        /// JSON file {"schema_version":1,"spec":{...scene parameters...}}.
        spec_json: PathBuf,
        out_dir: PathBuf,
    },
    /// Train per-view splats and poses on a scene directory; writes the
    /// step log, summary, final PLY, predicted cameras, and target renders.
    Train {
        scene_dir: PathBuf,
        out_dir: PathBuf,
        /// Pose source used when aggregating per-view splats during training.
        #[arg(long, value_enum, default_value = "mix")]
        forcing: ForcingArg,
        /// Camera-translation normalization applied before training.
        #[arg(long, value_enum, default_value = "max-pair")]
        norm: NormArg,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        /// Seed for pose-noise injection, target sampling, and the curriculum.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a splat PLY from a single-view camera JSON.
    Render {
        ply: PathBuf,
        camera_json: PathBuf,
        out_png: PathBuf,
    },
    /// Score a run directory against a ground-truth scene directory:
    /// per-view PSNR/SSIM plus pairwise pose AUC; writes eval.json into the
    /// run directory.
    Eval { pred_dir: PathBuf, gt_dir: PathBuf },
    /// Copy a PLY, dropping every Gaussian with opacity strictly below the
    /// threshold.
    Prune {
        ply_in: PathBuf,
        ply_out: PathBuf,
        #[arg(long, default_value_t = 0.005)]
        threshold: f64,
    },
    /// Refine splat means, colors, and camera poses against observed views;
    /// opacities, scales, and rotations stay bitwise untouched.
    Postopt {
        ply: PathBuf,
        /// Camera JSON whose image paths resolve inside `targets_dir`.
        poses_json: PathBuf,
        targets_dir: PathBuf,
        out_dir: PathBuf,
    },
    /// Run a frozen ablation grid (suite JSON picks "forcing" or
    /// "normalization") across worker processes and check the expected
    /// orderings.
    Ablate { suite_json: PathBuf, out_dir: PathBuf },
    #[command(hide = true)]
    AblateWorker { config: PathBuf },
}

/// Caps the in-process render pool when `LOCALSPLAT_THREADS` is set. Ablate
/// re-reads the variable itself to size its worker-process pool.
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LOCALSPLAT_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            CliError::config(format!("LOCALSPLAT_THREADS={v:?} is not a thread count"))
        })?;
        if n == 0 {
            return Err(CliError::config("LOCALSPLAT_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    configure_threads()?;
    match cmd {
        Cmd::Synth { spec_json, out_dir } => commands::cmd_synth(&spec_json, &out_dir),
        Cmd::Train { scene_dir, out_dir, forcing, norm, steps, seed } => commands::cmd_train(
            &scene_dir,
            forcing.into(),
            norm.into(),
            steps,
            seed,
            &out_dir,
        ),
        Cmd::Render { ply, camera_json, out_png } => {
            commands::cmd_render(&ply, &camera_json, &out_png)
        }
        Cmd::Eval { pred_dir, gt_dir } => commands::cmd_eval(&pred_dir, &gt_dir),
        Cmd::Prune { ply_in, ply_out, threshold } => {
            commands::cmd_prune(&ply_in, threshold, &ply_out)
        }
        Cmd::Postopt { ply, poses_json, targets_dir, out_dir } => {
            commands::cmd_postopt(&ply, &poses_json, &targets_dir, &out_dir)
        }
        Cmd::Ablate { suite_json, out_dir } => commands::cmd_ablate(&suite_json, &out_dir),
        Cmd::AblateWorker { config } => commands::cmd_ablate_worker(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
