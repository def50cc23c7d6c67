use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{adamw_step, learning_rate, AdamConfig, OptimizerState};
use super::scene::{sample_views, SceneSample, View};
use crate::error::{Error, Result, StageContext};
use crate::geometry::{Camera, SimilarityTransform};
use crate::losses::{loss_dep, loss_img, loss_sem, loss_total, LossReport, LossWeights};
use crate::nets::{Model, ModelConfig, Tape};
use crate::splatter::{psnr, rasterize, rasterize_on_tape, RenderOutput, SplatVars, TileConfig};
use crate::voxelizer::{mask_points, normalize_to_cuboid, MaskConfig, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Network widths, grid, offset cap Δ and pruning threshold τ.
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    /// Fraction of all steps spent in linear warmup.
    pub warmup: f64,
    /// Mask ratio γ.
    pub mask_ratio: f64,
    /// Views rendered per step (M).
    pub views_per_step: usize,
    pub epochs: usize,
    pub loss: LossWeights,
    pub tile: TileConfig,
    pub seed: u64,
    /// Checkpoint period in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Evaluation period in epochs; skipped epochs log a NaN PSNR.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            optimizer: AdamConfig::default(),
            warmup: 0.05,
            mask_ratio: 0.5,
            views_per_step: 5,
            epochs: 1,
            loss: LossWeights::default(),
            tile: TileConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.tile.validate()?;
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid(format!(
                "mask ratio {} outside [0,1)",
                self.mask_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::invalid("warmup fraction must lie in [0,1)"));
        }
        if self.views_per_step == 0 {
            return Err(Error::invalid("at least one view per step is required"));
        }
        Ok(())
    }
}

/// Parameters plus optimizer moments; everything a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.len()).collect();
        Ok(Self {
            model,
            optimizer: OptimizerState::new(&sizes),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub report: LossReport,
    /// Indices of the rendered views.
    pub views: Vec<usize>,
    /// Renders in the normalized frame (depth in normalized units).
    pub renders: Vec<RenderOutput>,
    /// Points left after masking.
    pub point_count: usize,
    pub gaussian_count: usize,
    pub anchor_count: usize,
}

/// SplitMix64 finalizer over a seed and a counter.
pub fn mix_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_scene(scene: &SceneSample, cfg: &TrainConfig) -> Result<()> {
    scene.validate()?;
    if scene.feature_dim() != cfg.model.d_star {
        return Err(Error::invalid(format!(
            "scene targets have width {}, model lifts to {}",
            scene.feature_dim(),
            cfg.model.d_star
        )));
    }
    Ok(())
}

/// One optimization step on one scene at learning rate `lr`.
pub fn train_step(
    state: &mut TrainState,
    scene: &SceneSample,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepOutput> {
    cfg.validate()?;
    check_scene(scene, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, state.optimizer.step));
    let mask_seed: u64 = rng.random();
    let view_seed: u64 = rng.random();

    let masked = mask_points(
        &scene.cloud,
        &MaskConfig {
            ratio: cfg.mask_ratio,
            seed: mask_seed,
        },
    )
    .stage("mask")?;
    let (cloud, transform) = normalize_to_cuboid(&masked).stage("normalize")?;
    let picks =
        sample_views(scene.views.len(), cfg.views_per_step, view_seed).stage("sample_views")?;

    let mut tape = Tape::new();
    let vars = state.model.bind(&mut tape);
    let fwd = vars.forward(&mut tape, &cloud).stage("model")?;
    let g = &fwd.gaussians;
    let splats = SplatVars {
        mean: g.mean,
        quat: g.quat,
        scale: g.scale,
        color: g.color,
        opacity: g.opacity,
        feature: g.feature,
    };

    let mut colors = Vec::new();
    let mut depths = Vec::new();
    let mut lifted = Vec::new();
    let mut renders = Vec::new();
    let mut depth_targets = Vec::new();
    for &k in &picks {
        let view = &scene.views[k];
        let cam = transform.apply_camera(&view.camera);
        let r = rasterize_on_tape(&mut tape, &splats, &cam, &cfg.tile).stage("rasterize")?;
        lifted.push(
            vars.project_features(&mut tape, r.feature)
                .stage("project")?,
        );
        colors.push(r.color);
        depths.push(r.depth);
        renders.push(r.output(&tape, &cam));
        depth_targets.push(scaled_depth(view, &transform));
    }

    let views: Vec<&View> = picks.iter().map(|&k| &scene.views[k]).collect();
    let color_t: Vec<&[f64]> = views.iter().map(|v| v.color.as_slice()).collect();
    let depth_t: Vec<&[f64]> = depth_targets.iter().map(|d| d.as_slice()).collect();
    let valid: Vec<&[bool]> = views.iter().map(|v| v.valid.as_slice()).collect();
    let feat_t: Vec<&[f64]> = views.iter().map(|v| v.features.as_slice()).collect();
    let l_img = loss_img(&mut tape, &colors, &color_t).stage("loss")?;
    let (l_dep, valid_count) = loss_dep(&mut tape, &depths, &depth_t, &valid).stage("loss")?;
    let l_sem = loss_sem(&mut tape, &lifted, &feat_t).stage("loss")?;
    let total = loss_total(&mut tape, l_img, l_dep, l_sem, &cfg.loss).stage("loss")?;
    let value = |v| tape.value(v).data[0];
    let report = LossReport {
        l_img: value(l_img),
        l_dep: value(l_dep),
        l_sem: value(l_sem),
        total: value(total),
        valid_pixel_count: valid_count,
    };
    if !report.total.is_finite() {
        return Err(Error::Degenerate(format!("non-finite loss {report:?}"))).stage("loss");
    }

    let grads = tape.backward(total).stage("backward")?;
    let grads: Vec<Vec<f64>> = vars
        .vars()
        .into_iter()
        .map(|v| grads.get(&tape, v))
        .collect();
    let TrainState { model, optimizer } = state;
    let mut params = model.params_mut();
    adamw_step(&mut params, &grads, optimizer, &cfg.optimizer, lr).stage("optimizer")?;

    Ok(StepOutput {
        report,
        views: picks,
        renders,
        point_count: cloud.len(),
        gaussian_count: fwd.gaussians.len(),
        anchor_count: fwd.gaussians.anchor_count,
    })
}

fn scaled_depth(view: &View, t: &SimilarityTransform) -> Vec<f64> {
    view.depth.iter().map(|d| d * t.scale).collect()
}

/// Losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Optimizer steps completed after this one.
    pub step: u64,
    pub l_img: f64,
    pub l_dep: f64,
    pub l_sem: f64,
    pub total: f64,
    /// Eval-mode PSNR on view 0 of the first scene, taken after the last
    /// step of an evaluated epoch; NaN elsewhere.
    pub psnr: f64,
}

/// Receives periodic checkpoints from [`fit`].
pub trait CheckpointSink {
    fn save(&mut self, epoch: usize, state: &TrainState) -> Result<()>;
}

/// Discards checkpoints.
pub struct NoCheckpoints;

impl CheckpointSink for NoCheckpoints {
    fn save(&mut self, _: usize, _: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Runs epochs (one step per scene, in order) from wherever `state` left off
/// until `cfg.epochs` epochs are complete.
pub fn fit(
    scenes: &[SceneSample],
    cfg: &TrainConfig,
    mut state: TrainState,
    sink: &mut dyn CheckpointSink,
) -> Result<(TrainState, Vec<StepRecord>)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("fit needs at least one scene"));
    }
    for s in scenes {
        check_scene(s, cfg)?;
    }
    let per_epoch = scenes.len() as u64;
    let total = cfg.epochs as u64 * per_epoch;
    if state.optimizer.step % per_epoch != 0 || state.optimizer.step > total {
        return Err(Error::invalid(format!(
            "state at step {} does not sit on an epoch boundary of this run",
            state.optimizer.step
        )));
    }
    let mut log = Vec::new();
    let first_epoch = (state.optimizer.step / per_epoch) as usize;
    for epoch in first_epoch..cfg.epochs {
        for scene in scenes {
            let lr = learning_rate(cfg.optimizer.lr, state.optimizer.step, total, cfg.warmup);
            let r = train_step(&mut state, scene, cfg, lr)?.report;
            log.push(StepRecord {
                epoch,
                step: state.optimizer.step,
                l_img: r.l_img,
                l_dep: r.l_dep,
                l_sem: r.l_sem,
                total: r.total,
                psnr: f64::NAN,
            });
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let last = log.last_mut().expect("at least one scene");
            last.psnr = evaluate_view(&state.model, &scenes[0], 0, &cfg.tile)?.psnr;
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            sink.save(epoch + 1, &state)?;
        }
    }
    Ok((state, log))
}

/// Eval-mode render of one view: full cloud, normalized frame.
#[derive(Debug, Clone)]
pub struct ViewRender {
    pub render: RenderOutput,
    /// `H·W·d*` lifted feature map.
    pub lifted: Vec<f64>,
    pub transform: SimilarityTransform,
}

/// Renders view `k` of `scene` with the unmasked cloud.
pub fn render_view(
    model: &Model,
    scene: &SceneSample,
    k: usize,
    tile: &TileConfig,
) -> Result<ViewRender> {
    let view = scene.views.get(k).ok_or_else(|| {
        Error::invalid(format!(
            "view {k} out of range ({} views)",
            scene.views.len()
        ))
    })?;
    render_camera(model, &scene.cloud, &view.camera, tile)
}

/// Renders the full `cloud` through a world-frame camera.
pub fn render_camera(
    model: &Model,
    cloud: &PointCloud,
    camera: &Camera,
    tile: &TileConfig,
) -> Result<ViewRender> {
    let (pc, transform) = normalize_to_cuboid(cloud).stage("normalize")?;
    let gaussians = model.gaussians(&pc).stage("model")?;
    let cam = transform.apply_camera(camera);
    let render = rasterize(&gaussians, &cam, tile);
    let mut tape = Tape::new();
    let proj = model.projection.bind(&mut tape);
    let fmap = tape.constant(crate::nets::Tensor::matrix(
        render.pixel_count(),
        render.feature_dim,
        render.feature.clone(),
    )?);
    let lifted = proj.forward(&mut tape, fmap).stage("project")?;
    Ok(ViewRender {
        lifted: tape.value(lifted).data.clone(),
        render,
        transform,
    })
}

/// Image-space quality of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewMetrics {
    pub psnr: f64,
    /// Mean absolute depth error over valid pixels.
    pub depth_mae: f64,
    /// Mean cosine between lifted and target features over valid pixels.
    pub cosine: f64,
    pub valid_pixels: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// Compares rendered maps with a view's targets after rounding the render to
/// single precision. `depth_scale` maps target depths into the render frame.
pub fn view_metrics(
    render: &RenderOutput,
    lifted: &[f64],
    view: &View,
    depth_scale: f64,
) -> Result<ViewMetrics> {
    view.validate()?;
    let n = view.pixel_count();
    let d = view.feature_dim;
    if render.pixel_count() != n || lifted.len() != n * d {
        return Err(Error::invalid(
            "render does not match the view it is scored against",
        ));
    }
    let color = round_f32(&render.color);
    let depth = round_f32(&render.depth);
    let lifted = round_f32(lifted);
    let psnr = psnr(&color, &view.color)?;
    let mut abs = 0.0;
    let mut cos = 0.0;
    let mut count = 0;
    for p in (0..n).filter(|&p| view.valid[p]) {
        abs += (depth[p] - view.depth[p] * depth_scale).abs();
        cos += cosine(
            &lifted[p * d..(p + 1) * d],
            &view.features[p * d..(p + 1) * d],
        );
        count += 1;
    }
    let (depth_mae, cosine) = if count == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (abs / count as f64, cos / count as f64)
    };
    Ok(ViewMetrics {
        psnr,
        depth_mae,
        cosine,
        valid_pixels: count,
    })
}

/// Eval-mode metrics of view `k`; depth error is in normalized units.
pub fn evaluate_view(
    model: &Model,
    scene: &SceneSample,
    k: usize,
    tile: &TileConfig,
) -> Result<ViewMetrics> {
    let r = render_view(model, scene, k, tile)?;
    view_metrics(&r.render, &r.lifted, &scene.views[k], r.transform.scale)
}
