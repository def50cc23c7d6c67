//! Finite-difference gradient suite over every differentiable stage.

use std::ops::Range;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::gradcheck::{check_gradients, GradcheckConfig, GradcheckReport, Mismatch};
use crate::io::{synth_scene, SynthSpec};
use crate::losses::{loss_dep, loss_img, loss_sem, loss_total, LossWeights};
use crate::nets::ops::{gather_rows, mul, scatter_mean, sum, weighted_sum};
use crate::nets::{Model, ModelConfig, ModelVars, Tape, Tensor, Var};
use crate::pipeline::View;
use crate::splatter::{rasterize_on_tape, SplatVars, TileConfig};
use crate::voxelizer::{mask_points, normalize_to_cuboid, GridSpec, MaskConfig, PointCloud};

/// Relative tolerance for single-stage checks.
pub const MODULE_TOL: f64 = 1e-4;
/// Relative tolerance for the end-to-end chain.
pub const PIPELINE_TOL: f64 = 1e-3;
/// Upper bound on decoded Gaussians in the suite scene.
pub const MAX_SUITE_GAUSSIANS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSize {
    Small,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub component: &'static str,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    /// Largest absolute disagreement; pairs within the checker's `atol` count
    /// as relative error 0.
    pub max_abs: f64,
    pub tolerance: f64,
    pub seconds: f64,
    /// Largest relative disagreement, if any coordinate was checked.
    pub worst: Option<Mismatch>,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel <= self.tolerance
    }
}

/// Model, masked normalized cloud and normalized-frame targets.
pub struct SuiteFixture {
    pub model: Model,
    pub cloud: PointCloud,
    pub cameras: Vec<Camera>,
    pub views: Vec<View>,
    /// Target depths in the normalized frame, one vector per view.
    pub depths: Vec<Vec<f64>>,
    pub tile: TileConfig,
}

impl SuiteFixture {
    pub fn new(seed: u64, size: SuiteSize) -> Result<Self> {
        let px = match size {
            SuiteSize::Small => 8,
            SuiteSize::Full => 16,
        };
        let grid = GridSpec::cube(4)?;
        let spec = SynthSpec {
            width: px,
            height: px,
            feature_dim: 5,
            points_per_blob: 24,
            ..SynthSpec::new(3, grid, 2, seed)
        };
        let (scene, _) = synth_scene(&spec)?;
        let masked = mask_points(&scene.cloud, &MaskConfig { ratio: 0.5, seed })?;
        let (cloud, t) = normalize_to_cuboid(&masked)?;
        let config = ModelConfig {
            d_s: 4,
            d_o: 4,
            d_f: 3,
            d_star: 5,
            enc_hidden: 4,
            conv_hidden: 4,
            head_hidden: 4,
            ..ModelConfig::new(grid)
        };
        let model = Model::new(config, seed)?;
        let n = model.gaussians(&cloud)?.len();
        if n == 0 || n > MAX_SUITE_GAUSSIANS {
            return Err(Error::invalid(format!(
                "suite scene decodes {n} Gaussians, expected 1..={MAX_SUITE_GAUSSIANS}"
            )));
        }
        Ok(Self {
            model,
            cloud,
            cameras: scene
                .views
                .iter()
                .map(|v| t.apply_camera(&v.camera))
                .collect(),
            depths: scene
                .views
                .iter()
                .map(|v| v.depth.iter().map(|d| d * t.scale).collect())
                .collect(),
            views: scene.views,
            tile: TileConfig::default(),
        })
    }
}

/// Fixed pseudo-random linear readout of any tensor.
fn readout(tape: &mut Tape, v: Var, salt: f64) -> Result<Var> {
    let value = tape.value(v);
    let shape = value.shape.clone();
    let w: Vec<f64> = (0..value.len())
        .map(|i| ((i as f64 + 1.0) * 0.7123 + salt).sin())
        .collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = mul(tape, v, w)?;
    Ok(sum(tape, p))
}

/// Model handles where `range` comes from `live` and the rest are constants.
fn bind_partial(
    tape: &mut Tape,
    template: &ModelVars,
    params: &[Tensor],
    range: Range<usize>,
    live: &[Var],
) -> Result<ModelVars> {
    let mut all: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    all[range].copy_from_slice(live);
    template.with_vars(&all)
}

fn row(
    component: &'static str,
    report: &GradcheckReport,
    tolerance: f64,
    start: Instant,
) -> SuiteRow {
    SuiteRow {
        component,
        checked: report.checked(),
        skipped: report.skipped(),
        max_rel: report.max_rel(),
        max_abs: report.max_abs(),
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
        worst: report.worst.clone(),
    }
}

fn ramp(rows: usize, cols: usize, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|i| f(i as f64)).collect())
}

/// Runs every stage check and the end-to-end chain. `perturb` scales the
/// analytic gradients and is 1 for a genuine check.
pub fn gradient_suite(seed: u64, size: SuiteSize, perturb: f64) -> Result<Vec<SuiteRow>> {
    let fx = SuiteFixture::new(seed, size)?;
    let cfg = GradcheckConfig {
        perturb,
        ..GradcheckConfig::default()
    };
    let params: Vec<Tensor> = fx
        .model
        .named_params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let template = fx.model.bind(&mut Tape::new());
    let enc = 0..template.enc1.vars().len() + template.enc2.vars().len();
    let conv = enc.end..enc.end + 4;
    let heads = conv.end..conv.end + template.heads.iter().map(|h| h.vars().len()).sum::<usize>();
    let proj = heads.end..params.len();
    let grid = fx.model.config.grid;

    // Intermediate activations at the current parameters.
    let mut tape = Tape::new();
    let vars = fx.model.bind(&mut tape);
    let (point_feats, ids) = vars.encode_points(&mut tape, &fx.cloud)?;
    let (volume, counts) = scatter_mean(&mut tape, point_feats, &ids, grid.cells())?;
    let occupied: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let dense = vars.densify(&mut tape, volume, &occupied)?;
    let cells: Vec<usize> = (0..grid.cells()).filter(|&i| occupied[i]).collect();
    let centers: Vec<[f64; 3]> = cells.iter().map(|&i| grid.center(i)).collect();
    let anchors = gather_rows(&mut tape, dense, cells.clone())?;
    let g = vars.decode_gaussians(&mut tape, anchors, &centers, &cells)?;
    let volume_t = tape.value(volume).clone();
    let anchors_t = tape.value(anchors).clone();
    let attrs: Vec<Tensor> = [g.mean, g.quat, g.scale, g.color, g.opacity, g.feature]
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect();
    drop(tape);

    let mut rows = Vec::new();

    let start = Instant::now();
    let report = check_gradients(&params[enc.clone()], &cfg, |tape, v| {
        let m = bind_partial(tape, &template, &params, enc.clone(), v)?;
        let (h, _) = m.encode_points(tape, &fx.cloud)?;
        readout(tape, h, 0.1)
    })?;
    rows.push(row("encoder", &report, MODULE_TOL, start));

    let start = Instant::now();
    let mut inputs = vec![volume_t];
    inputs.extend_from_slice(&params[conv.clone()]);
    let report = check_gradients(&inputs, &cfg, |tape, v| {
        let m = bind_partial(tape, &template, &params, conv.clone(), &v[1..])?;
        let d = m.densify(tape, v[0], &occupied)?;
        readout(tape, d, 0.2)
    })?;
    rows.push(row("densify", &report, MODULE_TOL, start));

    let start = Instant::now();
    let mut inputs = vec![anchors_t];
    inputs.extend_from_slice(&params[heads.clone()]);
    let report = check_gradients(&inputs, &cfg, |tape, v| {
        let m = bind_partial(tape, &template, &params, heads.clone(), &v[1..])?;
        let g = m.decode_gaussians(tape, v[0], &centers, &cells)?;
        let parts = [g.mean, g.quat, g.scale, g.color, g.opacity, g.feature];
        let scores = parts
            .iter()
            .enumerate()
            .map(|(i, &p)| readout(tape, p, 0.3 + i as f64))
            .collect::<Result<Vec<_>>>()?;
        weighted_sum(tape, &scores, &[1.0; 6])
    })?;
    rows.push(row("decoder", &report, MODULE_TOL, start));

    let start = Instant::now();
    let report = check_gradients(&attrs, &cfg, |tape, v| {
        let splats = SplatVars {
            mean: v[0],
            quat: v[1],
            scale: v[2],
            color: v[3],
            opacity: v[4],
            feature: v[5],
        };
        let r = rasterize_on_tape(tape, &splats, &fx.cameras[0], &fx.tile)?;
        readout(tape, r.packed, 0.4)
    })?;
    rows.push(row("rasterize", &report, MODULE_TOL, start));

    let start = Instant::now();
    let hw = fx.cameras[0].pixel_count();
    let (d_f, d_star) = (fx.model.config.d_f, fx.model.config.d_star);
    let mut inputs = vec![ramp(hw, d_f, |i| (i * 0.37).cos())?];
    inputs.extend_from_slice(&params[proj.clone()]);
    let report = check_gradients(&inputs, &cfg, |tape, v| {
        let m = bind_partial(tape, &template, &params, proj.clone(), &v[1..])?;
        let out = m.project_features(tape, v[0])?;
        readout(tape, out, 0.5)
    })?;
    rows.push(row("projection", &report, MODULE_TOL, start));

    let start = Instant::now();
    let view = &fx.views[0];
    let inputs = [
        ramp(hw, 3, |i| 0.5 + 0.4 * (i * 0.91).sin())?,
        ramp(hw, 1, |i| 0.6 + 0.2 * (i * 0.53).cos())?,
        ramp(hw, d_star, |i| (i * 0.29).sin())?,
    ];
    let report = check_gradients(&inputs, &cfg, |tape, v| {
        let li = loss_img(tape, &[v[0]], &[view.color.as_slice()])?;
        let (ld, _) = loss_dep(
            tape,
            &[v[1]],
            &[fx.depths[0].as_slice()],
            &[view.valid.as_slice()],
        )?;
        let ls = loss_sem(tape, &[v[2]], &[view.features.as_slice()])?;
        loss_total(tape, li, ld, ls, &LossWeights::default())
    })?;
    rows.push(row("losses", &report, MODULE_TOL, start));

    let start = Instant::now();
    let colors: Vec<&[f64]> = fx.views.iter().map(|v| v.color.as_slice()).collect();
    let depths: Vec<&[f64]> = fx.depths.iter().map(|d| d.as_slice()).collect();
    let valid: Vec<&[bool]> = fx.views.iter().map(|v| v.valid.as_slice()).collect();
    let feats: Vec<&[f64]> = fx.views.iter().map(|v| v.features.as_slice()).collect();
    let report = check_gradients(&params, &cfg, |tape, v| {
        let m = template.with_vars(v)?;
        let g = m.forward(tape, &fx.cloud)?.gaussians;
        let splats = SplatVars {
            mean: g.mean,
            quat: g.quat,
            scale: g.scale,
            color: g.color,
            opacity: g.opacity,
            feature: g.feature,
        };
        let (mut rc, mut rd, mut rf) = (Vec::new(), Vec::new(), Vec::new());
        for cam in &fx.cameras {
            let r = rasterize_on_tape(tape, &splats, cam, &fx.tile)?;
            rc.push(r.color);
            rd.push(r.depth);
            rf.push(m.project_features(tape, r.feature)?);
        }
        let li = loss_img(tape, &rc, &colors)?;
        let (ld, _) = loss_dep(tape, &rd, &depths, &valid)?;
        let ls = loss_sem(tape, &rf, &feats)?;
        loss_total(tape, li, ld, ls, &LossWeights::default())
    })?;
    rows.push(row("pipeline", &report, PIPELINE_TOL, start));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_perturbation_is_caught() {
        let rows = gradient_suite(3, SuiteSize::Small, 1.0).unwrap();
        assert!(rows.len() >= 6);
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
        let rows = gradient_suite(3, SuiteSize::Small, 1.01).unwrap();
        assert!(rows.iter().all(|r| !r.passed()), "{rows:?}");
    }
}
