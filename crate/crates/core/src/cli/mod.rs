//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid usage or input, 2 when a check
//! (gradient suite, evaluation threshold) fails.

pub mod suite;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::io::{
    augment_scene, find_scene_dirs, load_checkpoint, read_cameras, read_config, read_ground_truth, read_scene,
    read_scene_dir, save_checkpoint, synth_scene, write_atomic, write_metrics_csv, write_ppm, write_scene_dir,
    DirCheckpoints, Image, SynthSpec, TensorFile, CAMERA_FILE, SCENE_FILE,
};
use crate::pipeline::{
    evaluate_view, fit, mix_seed, render_camera, similarity_probe, view_metrics, TrainState, ViewMetrics,
};
use crate::splatter::{brute_force_render, TileConfig};
use crate::voxelizer::{GridSpec, PointCloud};
use suite::{gradient_suite, SuiteSize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Final checkpoint written by `train`.
pub const FINAL_CHECKPOINT: &str = "checkpoint.gxck";
/// Per-step metrics log written by `train`.
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_HEADER: &str = "scene,view,psnr,depth_mae,cosine,valid_pixels";

#[derive(Debug, Parser)]
#[command(name = "splatfield", version, about = "Feed-forward Gaussian splatting with feature distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Train on one or more scene directories.
    Train(TrainArgs),
    /// Render one view of a scene with a trained model.
    Render(RenderArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Score a model (or the stored ground truth) against scene targets.
    Eval(EvalArgs),
    /// Cosine similarity of every point to a query point.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub blobs: u32,
    /// `N` or `X,Y,Z`.
    #[arg(long, default_value = "16", value_parser = parse_grid)]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub points_per_blob: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// A scene directory or a directory of scene directories.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written at an epoch boundary.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene directory or scene file; cameras come from the sibling camera file.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub view: usize,
    /// Output prefix for `.ppm`, `.depth.gxtn` and `.feat.gxtn`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeArg {
    Small,
    Full,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SizeArg::Full)]
    pub size: SizeArg,
    /// Scales analytic gradients before comparison.
    #[arg(long, default_value_t = 1.0, hide = true)]
    pub perturb: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    /// Score the stored ground-truth Gaussians instead of a model.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long)]
    pub scenes: PathBuf,
    /// Metrics CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_psnr: Option<f64>,
    #[arg(long)]
    pub max_depth_mae: Option<f64>,
    #[arg(long)]
    pub min_cosine: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub query: usize,
    /// Score tensor path; a grayscale `.ppm` is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<GridSpec, String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad grid size `{p}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let grid = match parts[..] {
        [n] => GridSpec::cube(n),
        [x, y, z] => GridSpec::new(x, y, z),
        _ => return Err("grid must be N or X,Y,Z".into()),
    };
    grid.map_err(|e| e.to_string())
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Reports go to `out`, errors to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::CheckFailed) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<Status> {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Render(a) => cmd_render(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Probe(a) => cmd_probe(&a, out),
    }
}

fn say(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// `prefix` with `suffix` appended to its file name.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<Status> {
    let spec = SynthSpec {
        width: a.width,
        height: a.height,
        feature_dim: a.feature_dim,
        points_per_blob: a.points_per_blob,
        ..SynthSpec::new(a.blobs as usize, a.grid, a.views, a.seed)
    };
    let (scene, gt) = synth_scene(&spec)?;
    let files = write_scene_dir(&a.out, &scene, Some(&gt))?;
    say(
        out,
        format!(
            "synth: {} files in {} ({} blobs, {} points, {} views {}x{}, feature dim {}, seed {})",
            files.len(),
            a.out.display(),
            a.blobs,
            scene.cloud.len(),
            a.views,
            a.width,
            a.height,
            a.feature_dim,
            a.seed
        ),
    )?;
    Ok(Status::Ok)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<Status> {
    let (cfg, data) = read_config(&a.config)?;
    let dirs = find_scene_dirs(&a.scenes)?;
    let mut scenes = Vec::with_capacity(dirs.len());
    for (i, dir) in dirs.iter().enumerate() {
        let scene = read_scene_dir(dir, Some(cfg.model.d_star))?;
        scenes.push(if data.augment {
            augment_scene(&scene, mix_seed(cfg.seed ^ 0xa5a5_a5a5, i as u64))?
        } else {
            scene
        });
    }
    let state = match &a.resume {
        Some(p) => load_checkpoint(p, Some(&cfg.model))?,
        None => TrainState::new(&cfg)?,
    };
    create_dir(&a.out)?;
    let mut sink = DirCheckpoints::new(&a.out);
    let (state, log) = fit(&scenes, &cfg, state, &mut sink)?;
    save_checkpoint(&state, &a.out.join(FINAL_CHECKPOINT))?;
    write_metrics_csv(&a.out.join(METRICS_FILE), &log)?;
    let last = log.last();
    let psnr = log.iter().rev().map(|r| r.psnr).find(|p| !p.is_nan());
    say(
        out,
        format!(
            "train: {} scenes, {} steps logged, step {} reached; final total loss {}; last eval PSNR {}",
            scenes.len(),
            log.len(),
            state.optimizer.step,
            last.map_or("n/a".into(), |r| format!("{:.6}", r.total)),
            psnr.map_or("n/a".into(), |p| format!("{p:.3} dB")),
        ),
    )?;
    say(
        out,
        format!(
            "train: wrote {} and {} periodic checkpoints",
            a.out.join(FINAL_CHECKPOINT).display(),
            sink.written.len()
        ),
    )?;
    Ok(Status::Ok)
}

/// Cloud and cameras from a scene directory or a scene file.
fn load_geometry(path: &Path) -> Result<(PointCloud, Vec<Camera>)> {
    let (scene_file, dir) = if path.is_dir() {
        (path.join(SCENE_FILE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    };
    let cloud = read_scene(&scene_file)?;
    let cams = read_cameras(&dir.join(CAMERA_FILE))?;
    Ok((cloud, cams))
}

pub fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<Status> {
    let state = load_checkpoint(&a.checkpoint, None)?;
    let (cloud, cams) = load_geometry(&a.scene)?;
    let cam = cams
        .get(a.view)
        .ok_or_else(|| Error::invalid(format!("view {} out of range ({} cameras)", a.view, cams.len())))?;
    let r = render_camera(&state.model, &cloud, cam, &TileConfig::default())?;
    let (w, h) = (cam.width, cam.height);
    let depth: Vec<f64> = r.render.depth.iter().map(|d| d / r.transform.scale).collect();
    let d_star = r.lifted.len() / (w * h);
    create_parent(&a.out)?;
    let paths = [
        with_suffix(&a.out, ".ppm"),
        with_suffix(&a.out, ".depth.gxtn"),
        with_suffix(&a.out, ".feat.gxtn"),
    ];
    let color = r.render.color.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    write_ppm(
        &Image {
            width: w,
            height: h,
            data: color,
        },
        &paths[0],
    )?;
    TensorFile::f32(vec![h, w], depth)?.write(&paths[1])?;
    TensorFile::f32(vec![h, w, d_star], r.lifted)?.write(&paths[2])?;
    say(
        out,
        format!(
            "render: view {} ({}x{}) -> {}, {}, {}",
            a.view,
            w,
            h,
            paths[0].display(),
            paths[1].display(),
            paths[2].display()
        ),
    )?;
    Ok(Status::Ok)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<Status> {
    let size = match a.size {
        SizeArg::Small => SuiteSize::Small,
        SizeArg::Full => SuiteSize::Full,
    };
    let rows = gradient_suite(a.seed, size, a.perturb)?;
    say(
        out,
        format!(
            "{:<12} {:>8} {:>8} {:>12} {:>12} {:>10} {:>8}  status",
            "component", "checked", "skipped", "max_rel", "max_abs", "tolerance", "seconds"
        ),
    )?;
    for r in &rows {
        say(
            out,
            format!(
                "{:<12} {:>8} {:>8} {:>12.3e} {:>12.3e} {:>10.0e} {:>8.2}  {}",
                r.component,
                r.checked,
                r.skipped,
                r.max_rel,
                r.max_abs,
                r.tolerance,
                r.seconds,
                if r.passed() { "ok" } else { "FAIL" }
            ),
        )?;
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    say(out, format!("gradcheck: {} components, {failed} failed", rows.len()))?;
    Ok(if failed == 0 { Status::Ok } else { Status::CheckFailed })
}

fn csv_row(scene: &str, view: &str, m: &ViewMetrics) -> String {
    format!(
        "{scene},{view},{:?},{:?},{:?},{}\n",
        m.psnr, m.depth_mae, m.cosine, m.valid_pixels
    )
}

/// Mean of each metric over `ms`; the pixel count is summed.
fn mean_metrics(ms: &[ViewMetrics]) -> ViewMetrics {
    let n = ms.len() as f64;
    ViewMetrics {
        psnr: ms.iter().map(|m| m.psnr).sum::<f64>() / n,
        depth_mae: ms.iter().map(|m| m.depth_mae).sum::<f64>() / n,
        cosine: ms.iter().map(|m| m.cosine).sum::<f64>() / n,
        valid_pixels: ms.iter().map(|m| m.valid_pixels).sum(),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<Status> {
    let model = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p, None)?.model),
        None => None,
    };
    let dirs = find_scene_dirs(&a.scenes)?;
    let tile = TileConfig::default();
    let mut csv = format!("{EVAL_HEADER}\n");
    let mut all = Vec::new();
    for dir in &dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let mut per_scene = Vec::new();
        match &model {
            Some(model) => {
                let scene = read_scene_dir(dir, Some(model.config.d_star))?;
                for k in 0..scene.views.len() {
                    per_scene.push(evaluate_view(model, &scene, k, &tile)?);
                }
            }
            None => {
                let scene = read_scene_dir(dir, None)?;
                let gt = read_ground_truth(dir)?;
                for v in &scene.views {
                    let r = brute_force_render(&gt, &v.camera, &tile);
                    per_scene.push(view_metrics(&r, &r.feature, v, 1.0)?);
                }
            }
        }
        for (k, m) in per_scene.iter().enumerate() {
            csv.push_str(&csv_row(&name, &k.to_string(), m));
        }
        csv.push_str(&csv_row(&name, "mean", &mean_metrics(&per_scene)));
        all.extend(per_scene);
    }
    let mean = mean_metrics(&all);
    csv.push_str(&csv_row("all", "mean", &mean));
    create_parent(&a.out)?;
    write_atomic(&a.out, csv.as_bytes())?;
    say(
        out,
        format!(
            "eval: {} scenes, {} views; mean PSNR {:.3} dB, depth MAE {:.5}, cosine {:.5}; wrote {}",
            dirs.len(),
            all.len(),
            mean.psnr,
            mean.depth_mae,
            mean.cosine,
            a.out.display()
        ),
    )?;
    let mut failed = Vec::new();
    if a.min_psnr.is_some_and(|t| !(mean.psnr >= t)) {
        failed.push("psnr");
    }
    if a.max_depth_mae.is_some_and(|t| !(mean.depth_mae <= t)) {
        failed.push("depth_mae");
    }
    if a.min_cosine.is_some_and(|t| !(mean.cosine >= t)) {
        failed.push("cosine");
    }
    if failed.is_empty() {
        Ok(Status::Ok)
    } else {
        say(out, format!("eval: below threshold: {}", failed.join(", ")))?;
        Ok(Status::CheckFailed)
    }
}

/// Point splat of `scores` seen from `cam`: nearest point wins, gray level
/// `(s + 1) / 2`, black background.
fn score_image(cloud: &PointCloud, scores: &[f64], cam: &Camera) -> Image {
    let (w, h) = (cam.width, cam.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut data = vec![0.0; w * h * 3];
    for (p, &s) in cloud.coords.iter().zip(scores) {
        let t = cam.world_to_camera(&Vector3::from(*p));
        if t.z < cam.near {
            continue;
        }
        let uv = cam.project_point(&t);
        let (x, y) = (uv.x.round(), uv.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let i = y as usize * w + x as usize;
        if t.z < zbuf[i] {
            zbuf[i] = t.z;
            data[3 * i..3 * i + 3].fill(((s + 1.0) / 2.0).clamp(0.0, 1.0));
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

pub fn cmd_probe(a: &ProbeArgs, out: &mut dyn Write) -> Result<Status> {
    let state = load_checkpoint(&a.checkpoint, None)?;
    let (cloud, cams) = load_geometry(&a.scene)?;
    let scores = similarity_probe(&state.model, &cloud, a.query)?;
    let image_path = a.out.with_extension("ppm");
    if image_path == a.out {
        return Err(Error::invalid("probe output must not itself end in .ppm"));
    }
    create_parent(&a.out)?;
    TensorFile::f64(vec![scores.len()], scores.clone())?.write(&a.out)?;
    let cam = cams
        .first()
        .ok_or_else(|| Error::invalid("scene lists no cameras"))?;
    write_ppm(&score_image(&cloud, &scores, cam), &image_path)?;
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    say(
        out,
        format!(
            "probe: {} points, query {}, scores in [{lo:.4}, {hi:.4}]; wrote {} and {}",
            scores.len(),
            a.query,
            a.out.display(),
            image_path.display()
        ),
    )?;
    Ok(Status::Ok)
}
