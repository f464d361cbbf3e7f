//! The seven commands plus the hidden ablation worker. Each returns
//! `Err(CliError)` classified for the exit-code contract; success prints a
//! short human line (tables for `eval` and `ablate`) and writes any
//! machine-readable artifacts as versioned JSON.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Instant;

use localsplat_core::curriculum::{ForcingMode, ForcingSchedule};
use localsplat_core::gaussians::ply::{load_ply, save_ply};
use localsplat_core::gaussians::prune_by_opacity;
use localsplat_core::geometry::NormalizationStrategy;
use localsplat_core::losses::LossWeights;
use localsplat_core::metrics::{
    aggregate_pair_errors, pose_auc, pose_errors, psnr, ssim, ErrorAggregation,
    DEFAULT_AUC_THRESHOLDS,
};
use localsplat_core::rasterizer::{render, RenderConfig};
use localsplat_core::scenefile::{load_scene_file, save_scene_file, SceneFile, ViewRecord};
use localsplat_core::trainer::ablation::{
    arm_name_forcing, arm_name_normalization, forcing_ordering_checks,
    normalization_ordering_checks, run_forcing_cell_with_steps, run_normalization_cell_with_steps,
    summarize_arm, AblationSuite, ArmSummary, OrderingCheck, FORCING_ARMS, FORCING_SUITE_SCENES,
    NORMALIZATION_ARMS, NORMALIZATION_SUITE_SCENES,
};
use localsplat_core::trainer::{
    normalize_training_scene, post_optimize, train, PostOptConfig, TrainConfig,
};

use crate::error::{CliError, PathCtx, Result};
use crate::io::{
    load_png, load_scene_dir, read_versioned_json, save_png, save_scene_dir, write_json,
    write_jsonl, AblateReportFile, AucBlock, EvalFile, PerViewScore, PostOptFile, SummaryFile,
    SuiteFile, SynthSpecFile, WorkerConfigFile, WorkerResultFile, CLI_SCHEMA_VERSION, RENDERS_DIR,
    SCENE_JSON, TARGETS_JSON,
};

pub fn cmd_synth(spec_json: &Path, out_dir: &Path) -> Result<()> {
    let spec_file: SynthSpecFile = read_versioned_json(spec_json)?;
    let scene = localsplat_core::trainer::generate_scene(&spec_file.spec)?;
    save_scene_dir(out_dir, &scene)?;
    println!(
        "wrote {} context views, {} targets, {} gaussians to {}",
        scene.gt_poses.len(),
        scene.target_views.len(),
        scene.gt_gaussians.len(),
        out_dir.display()
    );
    Ok(())
}

/// The training curriculum behind `--forcing mix`: ground-truth poses for
/// the first fifth of the run, then the predicted-pose probability ramps
/// linearly to one at the final step. Teacher and self modes ignore the
/// ramp.
fn train_schedule(mode: ForcingMode, steps: u64, seed: u64) -> ForcingSchedule {
    ForcingSchedule {
        mode,
        t_start: steps / 5,
        t_end: steps.max(steps / 5 + 1),
        ratio_r: 1.0,
        rng_seed: seed,
    }
}

pub fn cmd_train(
    scene_dir: &Path,
    mode: ForcingMode,
    norm: NormalizationStrategy,
    steps: u64,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let loaded = load_scene_dir(scene_dir)?;
    let cfg = TrainConfig { steps, train_seed: seed, ..TrainConfig::default() };
    let schedule = train_schedule(mode, steps, seed);

    let started = Instant::now();
    let (state, report) = train(&loaded.scene, &schedule, &LossWeights::default(), norm, &cfg)?;

    std::fs::create_dir_all(out_dir.join(RENDERS_DIR)).path_ctx(out_dir)?;
    write_jsonl(&out_dir.join("report.jsonl"), &report.steps)?;
    write_json(
        &out_dir.join("summary.json"),
        &SummaryFile {
            schema_version: CLI_SCHEMA_VERSION,
            forcing: arm_name_forcing(mode).to_string(),
            norm: arm_name_normalization(norm).to_string(),
            steps,
            seed,
            summary: report.summary.clone(),
        },
    )?;

    // Artifacts live in the normalized scene frame (the frame training ran
    // in): the splat PLY under the predicted poses, the predicted cameras,
    // and ground-truth-pose renders of the held-out views for `eval`.
    let ns = normalize_training_scene(&loaded.scene, norm)?;
    let pred_poses = state.predicted_poses()?;
    let final_scene = state.aggregate_with(&pred_poses, &ns.k)?;
    save_ply(&final_scene, &out_dir.join("final.ply")).path_ctx(&out_dir.join("final.ply"))?;

    let pose_views: Vec<ViewRecord> = loaded
        .context_file
        .views
        .iter()
        .zip(&pred_poses)
        .map(|(v, p)| ViewRecord::new(v.id, p, v.image_path.clone()))
        .collect();
    let poses_file = SceneFile::new(&ns.k, pose_views, Some("final.ply".to_string()));
    save_scene_file(out_dir.join("poses.json"), &poses_file)
        .path_ctx(&out_dir.join("poses.json"))?;

    let world_gt = state.aggregate_with(&ns.context_poses, &ns.k)?;
    let render_cfg = RenderConfig::default();
    for (view, (pose, _)) in loaded.target_file.views.iter().zip(&ns.targets) {
        let name = Path::new(&view.image_path)
            .file_name()
            .ok_or_else(|| CliError::config(format!("bad image path {:?}", view.image_path)))?;
        let img = render(&world_gt, pose, &ns.k, &render_cfg);
        save_png(&out_dir.join(RENDERS_DIR).join(name), &img)?;
    }

    let s = &report.summary;
    println!(
        "{} steps in {:.1}s | pose-dependent {:.2} dB / ssim {:.3} | pose-free {:.2} dB / ssim {:.3} | auc {:?}",
        s.num_steps,
        started.elapsed().as_secs_f64(),
        s.pose_dependent_psnr,
        s.pose_dependent_ssim,
        s.pose_free_psnr,
        s.pose_free_ssim,
        s.pose_auc_deg
    );
    Ok(())
}

pub fn cmd_render(ply: &Path, camera_json: &Path, out_png: &Path) -> Result<()> {
    let scene = load_ply(ply).path_ctx(ply)?;
    let cam = load_scene_file(camera_json).path_ctx(camera_json)?;
    if cam.views.len() != 1 {
        return Err(CliError::config(format!(
            "{}: camera file must contain exactly one view, got {}",
            camera_json.display(),
            cam.views.len()
        )));
    }
    let pose = cam.views[0].pose(0)?;
    let k = cam.intrinsics.to_intrinsics()?;
    let img = render(&scene, &pose, &k, &RenderConfig::default());
    save_png(out_png, &img)?;
    println!("wrote {}", out_png.display());
    Ok(())
}

pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path) -> Result<()> {
    let gt_targets =
        load_scene_file(gt_dir.join(TARGETS_JSON)).path_ctx(&gt_dir.join(TARGETS_JSON))?;
    let gt_scene = load_scene_file(gt_dir.join(SCENE_JSON)).path_ctx(&gt_dir.join(SCENE_JSON))?;

    let mut per_view = Vec::new();
    for view in &gt_targets.views {
        let name = Path::new(&view.image_path)
            .file_name()
            .ok_or_else(|| CliError::config(format!("bad image path {:?}", view.image_path)))?;
        let gt_img = load_png(&gt_dir.join(&view.image_path))?;
        let pred_img = load_png(&pred_dir.join(RENDERS_DIR).join(name))?;
        per_view.push(PerViewScore {
            view: name.to_string_lossy().into_owned(),
            psnr_db: psnr(&pred_img, &gt_img)?,
            ssim: ssim(&pred_img, &gt_img)?,
        });
    }
    let n = per_view.len() as f64;
    let mean_psnr = per_view.iter().map(|v| v.psnr_db).sum::<f64>() / n;
    let mean_ssim = per_view.iter().map(|v| v.ssim).sum::<f64>() / n;

    let pred_cams =
        load_scene_file(pred_dir.join("poses.json")).path_ctx(&pred_dir.join("poses.json"))?;
    let pairs = pose_errors(&pred_cams.poses()?, &gt_scene.poses()?)?;
    let errors = aggregate_pair_errors(&pairs, ErrorAggregation::MaxRotTrans);
    let auc = pose_auc(&errors, &DEFAULT_AUC_THRESHOLDS)?;

    let name_w = per_view.iter().map(|v| v.view.len()).max().unwrap_or(4).max(4);
    println!("{:<name_w$}  {:>8}  {:>6}", "view", "psnr_db", "ssim");
    for v in &per_view {
        println!("{:<name_w$}  {:>8.2}  {:>6.3}", v.view, v.psnr_db, v.ssim);
    }
    println!("{:<name_w$}  {:>8.2}  {:>6.3}", "mean", mean_psnr, mean_ssim);
    println!();
    println!("pose auc (pairwise max(rot, trans-dir) error)");
    for (t, v) in DEFAULT_AUC_THRESHOLDS.iter().zip(&auc) {
        println!("@{:<4}  {:.3}", format!("{t}"), v);
    }

    write_json(
        &pred_dir.join("eval.json"),
        &EvalFile {
            schema_version: CLI_SCHEMA_VERSION,
            per_view,
            mean_psnr_db: mean_psnr,
            mean_ssim: mean_ssim,
            pose_auc: AucBlock {
                thresholds_deg: DEFAULT_AUC_THRESHOLDS.to_vec(),
                values: auc,
                aggregation: "max-rot-trans".to_string(),
            },
        },
    )?;
    Ok(())
}

pub fn cmd_prune(ply_in: &Path, threshold: f64, ply_out: &Path) -> Result<()> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(CliError::config(format!(
            "threshold must be finite and non-negative, got {threshold}"
        )));
    }
    let scene = load_ply(ply_in).path_ctx(ply_in)?;
    let kept = prune_by_opacity(&scene, threshold);
    save_ply(&kept, ply_out).path_ctx(ply_out)?;
    let removed = scene.len() - kept.len();
    println!(
        "kept {}/{} gaussians (removed fraction {:.4})",
        kept.len(),
        scene.len(),
        removed as f64 / scene.len().max(1) as f64
    );
    Ok(())
}

pub fn cmd_postopt(
    ply: &Path,
    poses_json: &Path,
    targets_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    let scene = load_ply(ply).path_ctx(ply)?;
    let cams = load_scene_file(poses_json).path_ctx(poses_json)?;
    let poses = cams.poses()?;
    let k = cams.intrinsics.to_intrinsics()?;
    let mut observations = Vec::with_capacity(cams.views.len());
    for view in &cams.views {
        observations.push(load_png(&targets_dir.join(&view.image_path))?);
    }

    let cfg = PostOptConfig::default();
    let (refined, refined_poses, report) =
        post_optimize(&scene, &poses, &observations, &k, &cfg, &RenderConfig::default())?;

    std::fs::create_dir_all(out_dir).path_ctx(out_dir)?;
    save_ply(&refined, &out_dir.join("refined.ply")).path_ctx(&out_dir.join("refined.ply"))?;
    let views: Vec<ViewRecord> = cams
        .views
        .iter()
        .zip(&refined_poses)
        .map(|(v, p)| ViewRecord::new(v.id, p, v.image_path.clone()))
        .collect();
    save_scene_file(
        out_dir.join("refined_poses.json"),
        &SceneFile::new(&k, views, Some("refined.ply".to_string())),
    )
    .path_ctx(&out_dir.join("refined_poses.json"))?;
    write_json(
        &out_dir.join("postopt.json"),
        &PostOptFile {
            schema_version: CLI_SCHEMA_VERSION,
            iters: cfg.iters,
            initial_psnr_db: report.initial_psnr,
            final_psnr_db: report.final_psnr,
            losses: report.losses.clone(),
        },
    )?;
    println!(
        "psnr {:.2} -> {:.2} dB over {} iterations",
        report.initial_psnr, report.final_psnr, cfg.iters
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation grids

fn suite_arms(suite: AblationSuite) -> Vec<&'static str> {
    match suite {
        AblationSuite::Forcing => FORCING_ARMS.iter().map(|m| arm_name_forcing(*m)).collect(),
        AblationSuite::Normalization => {
            NORMALIZATION_ARMS.iter().map(|s| arm_name_normalization(*s)).collect()
        }
    }
}

fn parse_forcing_arm(name: &str) -> Result<ForcingMode> {
    FORCING_ARMS
        .into_iter()
        .find(|m| arm_name_forcing(*m) == name)
        .ok_or_else(|| CliError::config(format!("unknown forcing arm {name:?}")))
}

fn parse_norm_arm(name: &str) -> Result<NormalizationStrategy> {
    NORMALIZATION_ARMS
        .into_iter()
        .find(|s| arm_name_normalization(*s) == name)
        .ok_or_else(|| CliError::config(format!("unknown normalization arm {name:?}")))
}

/// How many worker processes to keep in flight: `LOCALSPLAT_THREADS` if set
/// (the one environment knob this binary honors), else the machine's
/// parallelism. When the pool is wider than one, each worker is pinned to a
/// single thread so the pool is the only source of parallelism.
fn worker_pool_size() -> Result<usize> {
    match std::env::var("LOCALSPLAT_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| CliError::config(format!("LOCALSPLAT_THREADS={v:?} is not a thread count")))?;
            if n == 0 {
                return Err(CliError::config("LOCALSPLAT_THREADS must be at least 1"));
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn reap_worker(mut child: Child, label: &str) -> Result<()> {
    let status = child.wait()?;
    if status.success() {
        return Ok(());
    }
    Err(match status.code() {
        Some(2) => CliError::config(format!("worker {label} reported a configuration error")),
        Some(3) => CliError::io(format!("worker {label} reported an i/o error")),
        Some(4) => {
            CliError::Numeric(anyhow::anyhow!("worker {label} reported a numerical failure"))
        }
        other => CliError::io(format!("worker {label} died with status {other:?}")),
    })
}

pub fn cmd_ablate(suite_json: &Path, out_dir: &Path) -> Result<()> {
    let sf: SuiteFile = read_versioned_json(suite_json)?;
    let default_scenes = match sf.suite {
        AblationSuite::Forcing => FORCING_SUITE_SCENES,
        AblationSuite::Normalization => NORMALIZATION_SUITE_SCENES,
    };
    let scenes = sf.scenes.unwrap_or(default_scenes);
    if scenes == 0 {
        return Err(CliError::config("suite must cover at least one scene"));
    }
    let arms = suite_arms(sf.suite);
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).path_ctx(&runs_dir)?;
    let exe = std::env::current_exe()?;
    let pool = worker_pool_size()?;

    // Fan out one process per (arm, scene) cell, at most `pool` at a time.
    let mut pending: VecDeque<(Child, String)> = VecDeque::new();
    let mut result_paths: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for arm in &arms {
        let mut arm_paths = Vec::new();
        for seed in 0..scenes {
            let label = format!("{}_{arm}_{seed:03}", sf.suite);
            let cfg_path = runs_dir.join(format!("{label}.config.json"));
            let out_json = runs_dir.join(format!("{label}.json"));
            write_json(
                &cfg_path,
                &WorkerConfigFile {
                    schema_version: CLI_SCHEMA_VERSION,
                    suite: sf.suite,
                    arm: arm.to_string(),
                    scene_seed: seed,
                    steps: sf.steps,
                    out_json: out_json.clone(),
                },
            )?;
            while pending.len() >= pool {
                let (child, lbl) = pending.pop_front().unwrap();
                reap_worker(child, &lbl)?;
            }
            let mut cmd = Command::new(&exe);
            cmd.arg("ablate-worker").arg(&cfg_path).stdout(Stdio::null());
            if pool > 1 {
                cmd.env("LOCALSPLAT_THREADS", "1");
            }
            pending.push_back((cmd.spawn().path_ctx(&exe)?, label));
            arm_paths.push(out_json);
        }
        result_paths.push((arm.to_string(), arm_paths));
    }
    while let Some((child, lbl)) = pending.pop_front() {
        reap_worker(child, &lbl)?;
    }

    let mut arm_summaries: Vec<ArmSummary> = Vec::new();
    for (arm, paths) in &result_paths {
        let runs: Vec<_> = paths
            .iter()
            .map(|p| read_versioned_json::<WorkerResultFile>(p).map(|w| w.summary))
            .collect::<Result<_>>()?;
        arm_summaries.push(summarize_arm(arm.clone(), &runs));
    }
    let checks: Vec<OrderingCheck> = match sf.suite {
        AblationSuite::Forcing => {
            forcing_ordering_checks(&arm_summaries[0], &arm_summaries[1], &arm_summaries[2])
        }
        AblationSuite::Normalization => normalization_ordering_checks(
            &arm_summaries[0],
            &arm_summaries[1],
            &arm_summaries[2],
            &arm_summaries[3],
        ),
    };

    print_ablate_table(&arm_summaries, &checks);
    write_json(
        &out_dir.join("report.json"),
        &AblateReportFile {
            schema_version: CLI_SCHEMA_VERSION,
            suite: sf.suite,
            scenes,
            arms: arm_summaries,
            checks: checks.clone(),
        },
    )?;

    let failed: Vec<&str> =
        checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Regression(format!("ordering regressed: {}", failed.join("; "))))
    }
}

fn print_ablate_table(arms: &[ArmSummary], checks: &[OrderingCheck]) {
    let name_w = arms.iter().map(|a| a.arm.len()).max().unwrap_or(3).max(3);
    println!(
        "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>5}",
        "arm", "pd_psnr", "pd_ssim", "pf_psnr", "pf_ssim", "runs"
    );
    for a in arms {
        println!(
            "{:<name_w$}  {:>8.2}  {:>8.3}  {:>8.2}  {:>8.3}  {:>5}",
            a.arm,
            a.mean_pose_dependent_psnr,
            a.mean_pose_dependent_ssim,
            a.mean_pose_free_psnr,
            a.mean_pose_free_ssim,
            a.runs
        );
    }
    println!();
    for c in checks {
        println!(
            "[{}] {} ({:.2} vs {:.2}, margin {:.2})",
            if c.pass { "ok" } else { "FAIL" },
            c.name,
            c.lhs,
            c.rhs,
            c.margin
        );
    }
}

pub fn cmd_ablate_worker(config: &Path) -> Result<()> {
    let wc: WorkerConfigFile = read_versioned_json(config)?;
    let summary = match wc.suite {
        AblationSuite::Forcing => {
            run_forcing_cell_with_steps(parse_forcing_arm(&wc.arm)?, wc.scene_seed, wc.steps)?
        }
        AblationSuite::Normalization => run_normalization_cell_with_steps(
            parse_norm_arm(&wc.arm)?,
            wc.scene_seed,
            wc.steps,
        )?,
    };
    write_json(
        &wc.out_json,
        &WorkerResultFile {
            schema_version: CLI_SCHEMA_VERSION,
            suite: wc.suite,
            arm: wc.arm,
            scene_seed: wc.scene_seed,
            summary,
        },
    )?;
    Ok(())
}
