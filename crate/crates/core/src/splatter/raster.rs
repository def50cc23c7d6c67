//! Tiled forward blending and its exact reverse pass.
//!
//! Gaussians are preprocessed independently, sorted once by camera depth
//! (index tie-break) and binned into square tiles by the radius outside of
//! which they cannot contribute. Tiles render in parallel; the backward
//! pass re-walks each pixel's contributor list back to front and reduces
//! per-tile partial gradients in tile order.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::{RenderOutput, TileConfig, ALPHA_MAX};
use crate::error::{Error, Result};
use crate::geometry::{
    max_eigenvalue_2x2, perspective_jacobian, rotation_from_unit_quat, rotation_vjp, Camera,
    GaussianPrimitive, LOWPASS,
};
use crate::nets::ops::slice_cols;
use crate::nets::tape::{Op, Tape, Tensor, Var};

const MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Borrowed per-Gaussian attribute rows.
#[derive(Clone, Copy)]
struct Attrs<'a> {
    mean: &'a [f64],
    quat: &'a [f64],
    scale: &'a [f64],
    color: &'a [f64],
    opacity: &'a [f64],
    feature: &'a [f64],
    d_f: usize,
}

impl Attrs<'_> {
    fn len(&self) -> usize {
        self.opacity.len()
    }

    fn v3(s: &[f64], i: usize) -> Vector3<f64> {
        Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2])
    }

    fn feature(&self, i: usize) -> &[f64] {
        &self.feature[i * self.d_f..(i + 1) * self.d_f]
    }
}

/// Screen-space state of one Gaussian.
struct Splat {
    t: Vector3<f64>,
    mean2d: Vector2<f64>,
    /// `(a, b, c)` of the symmetric conic `[[a, b], [b, c]]`.
    conic: [f64; 3],
    tiles: (usize, usize, usize, usize),
}

struct Prepared {
    splats: Vec<Option<Splat>>,
    tiles_x: usize,
    lists: Vec<Vec<u32>>,
    signature: u64,
}

fn covariance_parts(
    q: &Vector4<f64>,
    s: &Vector3<f64>,
) -> (Vector4<f64>, Matrix3<f64>, Matrix3<f64>) {
    let qhat = q / q.norm();
    let r = rotation_from_unit_quat(&qhat);
    let m = r * Matrix3::from_diagonal(s);
    (qhat, r, m)
}

fn influence_radius(cov2d: &Matrix2<f64>, opacity: f64, cfg: &TileConfig) -> f64 {
    let sigma = max_eigenvalue_2x2(cov2d).sqrt();
    let mut r = f64::INFINITY;
    if let Some(k) = cfg.support {
        r = r.min(k * sigma);
    }
    if cfg.alpha_cutoff > 0.0 {
        // Outside this radius σ·G < cutoff along every direction.
        let ratio = opacity / cfg.alpha_cutoff;
        r = r.min(if ratio <= 1.0 {
            0.0
        } else {
            (2.0 * ratio.ln()).sqrt() * sigma
        });
    }
    r
}

fn prepare(a: &Attrs, cam: &Camera, cfg: &TileConfig) -> Prepared {
    let (w, h, ts) = (cam.width, cam.height, cfg.tile);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let splats: Vec<Option<Splat>> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let t = cam.rotation * Attrs::v3(a.mean, i) + cam.translation;
            if t.z <= cam.near {
                return None;
            }
            let q = Vector4::new(
                a.quat[4 * i],
                a.quat[4 * i + 1],
                a.quat[4 * i + 2],
                a.quat[4 * i + 3],
            );
            let (_, _, m) = covariance_parts(&q, &Attrs::v3(a.scale, i));
            let cov_cam = cam.rotation * (m * m.transpose()) * cam.rotation.transpose();
            let j = perspective_jacobian(&t, cam.fx, cam.fy);
            let cov2d = j * cov_cam * j.transpose() + Matrix2::identity() * LOWPASS;
            let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            let conic = [
                cov2d[(1, 1)] / det,
                -cov2d[(0, 1)] / det,
                cov2d[(0, 0)] / det,
            ];
            let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
            let r = influence_radius(&cov2d, a.opacity[i], cfg);
            let lo_x = (mean2d.x - r).ceil().max(0.0);
            let hi_x = (mean2d.x + r).floor().min((w - 1) as f64);
            let lo_y = (mean2d.y - r).ceil().max(0.0);
            let hi_y = (mean2d.y + r).floor().min((h - 1) as f64);
            if !(lo_x <= hi_x && lo_y <= hi_y) {
                return Some(Splat {
                    t,
                    mean2d,
                    conic,
                    tiles: (1, 0, 1, 0),
                });
            }
            let tiles = (
                lo_x as usize / ts,
                hi_x as usize / ts,
                lo_y as usize / ts,
                hi_y as usize / ts,
            );
            Some(Splat {
                t,
                mean2d,
                conic,
                tiles,
            })
        })
        .collect();

    let mut signature = 0u64;
    let mut order: Vec<usize> = Vec::with_capacity(a.len());
    for (i, s) in splats.iter().enumerate() {
        signature = (signature.rotate_left(7) ^ u64::from(s.is_some())).wrapping_mul(MIX);
        if s.is_some() {
            order.push(i);
        }
    }
    order.sort_by(|&x, &y| {
        let (zx, zy) = (
            splats[x].as_ref().unwrap().t.z,
            splats[y].as_ref().unwrap().t.z,
        );
        zx.total_cmp(&zy).then(x.cmp(&y))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let (x0, x1, y0, y1) = splats[i].as_ref().unwrap().tiles;
        for ty in y0..=y1.min(tiles_y.saturating_sub(1)) {
            for tx in x0..=x1.min(tiles_x - 1) {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    Prepared {
        splats,
        tiles_x,
        lists,
        signature,
    }
}

/// One blended term at a pixel.
#[derive(Clone, Copy)]
struct Contribution {
    gid: usize,
    slot: usize,
    alpha: f64,
    gauss: f64,
    t_before: f64,
    clamped: bool,
    d: Vector2<f64>,
}

/// Walks the front-to-back blend at pixel `(x, y)`, calling `visit` for
/// every contributing Gaussian. Returns final transmittance and the branch
/// hash of the walk.
fn blend_pixel(
    x: usize,
    y: usize,
    list: &[u32],
    prep: &Prepared,
    a: &Attrs,
    cfg: &TileConfig,
    mut visit: impl FnMut(&Contribution),
) -> (f64, u64) {
    let pixel = Vector2::new(x as f64, y as f64);
    let mut t = 1.0;
    let mut hash = 0u64;
    let support = cfg.support.map(|k| k * k);
    for (slot, &gid) in list.iter().enumerate() {
        let gid = gid as usize;
        let s = prep.splats[gid].as_ref().unwrap();
        let d = pixel - s.mean2d;
        let [ca, cb, cc] = s.conic;
        let q = ca * d.x * d.x + 2.0 * cb * d.x * d.y + cc * d.y * d.y;
        let code = if support.is_some_and(|k2| q > k2) {
            1
        } else {
            let gauss = (-0.5 * q).exp();
            let raw = a.opacity[gid] * gauss;
            let clamped = raw > ALPHA_MAX;
            let alpha = if clamped { ALPHA_MAX } else { raw };
            if alpha < cfg.alpha_cutoff {
                2
            } else {
                visit(&Contribution {
                    gid,
                    slot,
                    alpha,
                    gauss,
                    t_before: t,
                    clamped,
                    d,
                });
                t *= 1.0 - alpha;
                if t < cfg.transmittance_floor {
                    hash = (hash.rotate_left(3) ^ 7).wrapping_mul(MIX);
                    break;
                }
                3 + u64::from(clamped)
            }
        };
        hash = (hash.rotate_left(3) ^ code).wrapping_mul(MIX);
    }
    (t, hash)
}

fn tile_pixels(
    tile: usize,
    tiles_x: usize,
    cam: &Camera,
    ts: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let (x0, y0) = (tx * ts, ty * ts);
    let (x1, y1) = ((x0 + ts).min(cam.width), (y0 + ts).min(cam.height));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

fn forward(a: &Attrs, cam: &Camera, cfg: &TileConfig) -> (RenderOutput, u64) {
    let prep = prepare(a, cam, cfg);
    let d_f = a.d_f;
    let mut out = RenderOutput::background(cam.width, cam.height, d_f, cfg.background);
    struct Px {
        p: usize,
        color: [f64; 3],
        depth: f64,
        feature: Vec<f64>,
        t: f64,
    }
    let tiles: Vec<(Vec<Px>, u64)> = (0..prep.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &prep.lists[tile];
            let mut hash = tile as u64;
            let mut pixels = Vec::new();
            for (x, y) in tile_pixels(tile, prep.tiles_x, cam, cfg.tile) {
                let mut px = Px {
                    p: y * cam.width + x,
                    color: [0.0; 3],
                    depth: 0.0,
                    feature: vec![0.0; d_f],
                    t: 1.0,
                };
                let (t, h) = blend_pixel(x, y, list, &prep, a, cfg, |c| {
                    let w = c.alpha * c.t_before;
                    for k in 0..3 {
                        px.color[k] += a.color[3 * c.gid + k] * w;
                    }
                    px.depth += prep.splats[c.gid].as_ref().unwrap().t.z * w;
                    for (f, v) in px.feature.iter_mut().zip(a.feature(c.gid)) {
                        *f += v * w;
                    }
                });
                px.t = t;
                hash = (hash.rotate_left(5) ^ h).wrapping_mul(MIX);
                pixels.push(px);
            }
            (pixels, hash)
        })
        .collect();
    let mut signature = prep.signature;
    for (pixels, hash) in tiles {
        signature = (signature.rotate_left(5) ^ hash).wrapping_mul(MIX);
        for px in pixels {
            let p = px.p;
            for k in 0..3 {
                out.color[3 * p + k] = px.color[k] + px.t * cfg.background[k];
            }
            out.depth[p] = px.depth;
            out.feature[p * d_f..(p + 1) * d_f].copy_from_slice(&px.feature);
            out.transmittance[p] = px.t;
        }
    }
    (out, signature)
}

/// Screen-space gradient record per Gaussian: mean2d(2), conic(3), color(3),
/// depth(1), opacity(1), feature(d_f).
const SCREEN: usize = 10;

struct AttrGrads {
    mean: Vec<f64>,
    quat: Vec<f64>,
    scale: Vec<f64>,
    color: Vec<f64>,
    opacity: Vec<f64>,
    feature: Vec<f64>,
}

/// Upstream gradients per pixel in the packed channel layout
/// `[color(3), depth, feature(d_f), transmittance]`.
fn backward(a: &Attrs, cam: &Camera, cfg: &TileConfig, g_out: &[f64]) -> AttrGrads {
    let prep = prepare(a, cam, cfg);
    let d_f = a.d_f;
    let ch = 5 + d_f;
    let stride = SCREEN + d_f;
    let bg = cfg.background;

    let partials: Vec<Vec<f64>> = (0..prep.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &prep.lists[tile];
            let mut acc = vec![0.0; list.len() * stride];
            let mut contribs: Vec<Contribution> = Vec::new();
            for (x, y) in tile_pixels(tile, prep.tiles_x, cam, cfg.tile) {
                let p = y * cam.width + x;
                let g = &g_out[p * ch..(p + 1) * ch];
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                contribs.clear();
                let (t_final, _) = blend_pixel(x, y, list, &prep, a, cfg, |c| contribs.push(*c));
                let (g_c, g_z, g_f, g_t) = (&g[0..3], g[3], &g[4..4 + d_f], g[4 + d_f]);
                // Σ_{j>i} v_j w_j plus the final-transmittance terms.
                let mut suffix = (g_c[0] * bg[0] + g_c[1] * bg[1] + g_c[2] * bg[2] + g_t) * t_final;
                for c in contribs.iter().rev() {
                    let s = prep.splats[c.gid].as_ref().unwrap();
                    let w = c.alpha * c.t_before;
                    let col = &a.color[3 * c.gid..3 * c.gid + 3];
                    let feat = a.feature(c.gid);
                    let v = g_c[0] * col[0]
                        + g_c[1] * col[1]
                        + g_c[2] * col[2]
                        + g_z * s.t.z
                        + g_f.iter().zip(feat).map(|(x, y)| x * y).sum::<f64>();
                    let g_alpha = v * c.t_before - suffix / (1.0 - c.alpha);
                    suffix += v * w;

                    let r = &mut acc[c.slot * stride..(c.slot + 1) * stride];
                    r[5] += g_c[0] * w;
                    r[6] += g_c[1] * w;
                    r[7] += g_c[2] * w;
                    r[8] += g_z * w;
                    for (dst, gf) in r[SCREEN..].iter_mut().zip(g_f) {
                        *dst += gf * w;
                    }
                    if c.clamped {
                        continue;
                    }
                    let opacity = a.opacity[c.gid];
                    r[9] += g_alpha * c.gauss;
                    // G = exp(-q/2), q = dᵀ·conic·d, d = pixel - mean2d.
                    let g_q = -0.5 * c.gauss * opacity * g_alpha;
                    let [ca, cb, cc] = s.conic;
                    let d = c.d;
                    r[0] -= g_q * 2.0 * (ca * d.x + cb * d.y);
                    r[1] -= g_q * 2.0 * (cb * d.x + cc * d.y);
                    r[2] += g_q * d.x * d.x;
                    r[3] += g_q * 2.0 * d.x * d.y;
                    r[4] += g_q * d.y * d.y;
                }
            }
            acc
        })
        .collect();

    let n = a.len();
    let mut screen = vec![0.0; n * stride];
    for (list, acc) in prep.lists.iter().zip(&partials) {
        for (slot, &gid) in list.iter().enumerate() {
            let dst = &mut screen[gid as usize * stride..(gid as usize + 1) * stride];
            for (x, y) in dst.iter_mut().zip(&acc[slot * stride..(slot + 1) * stride]) {
                *x += y;
            }
        }
    }

    let per: Vec<[f64; 10]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let Some(s) = prep.splats[i].as_ref() else {
                return [0.0; 10];
            };
            let r = &screen[i * stride..(i + 1) * stride];
            chain_to_world(a, cam, i, s, r)
        })
        .collect();

    let mut out = AttrGrads {
        mean: vec![0.0; 3 * n],
        quat: vec![0.0; 4 * n],
        scale: vec![0.0; 3 * n],
        color: vec![0.0; 3 * n],
        opacity: vec![0.0; n],
        feature: vec![0.0; n * d_f],
    };
    for (i, g) in per.iter().enumerate() {
        out.mean[3 * i..3 * i + 3].copy_from_slice(&g[0..3]);
        out.quat[4 * i..4 * i + 4].copy_from_slice(&g[3..7]);
        out.scale[3 * i..3 * i + 3].copy_from_slice(&g[7..10]);
        let r = &screen[i * stride..(i + 1) * stride];
        out.color[3 * i..3 * i + 3].copy_from_slice(&r[5..8]);
        out.opacity[i] = r[9];
        out.feature[i * d_f..(i + 1) * d_f].copy_from_slice(&r[SCREEN..]);
    }
    out
}

/// Screen-space gradients of one Gaussian → mean (3), raw quaternion (4),
/// scale (3).
fn chain_to_world(a: &Attrs, cam: &Camera, i: usize, s: &Splat, r: &[f64]) -> [f64; 10] {
    let t = s.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let q = Vector4::new(
        a.quat[4 * i],
        a.quat[4 * i + 1],
        a.quat[4 * i + 2],
        a.quat[4 * i + 3],
    );
    let scale = Attrs::v3(a.scale, i);
    let (qhat, rot, m) = covariance_parts(&q, &scale);
    let w = cam.rotation;
    let cov_cam = w * (m * m.transpose()) * w.transpose();
    let j = perspective_jacobian(&t, fx, fy);

    // conic → cov2d: dL/dΣ₂ = -K·Gk·K with Gk the symmetric conic gradient.
    let k = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let gk = Matrix2::new(r[2], 0.5 * r[3], 0.5 * r[3], r[4]);
    let g_cov2d = -(k * gk * k);
    // cov2d = J Σc Jᵀ + λI
    let g_cov_cam = j.transpose() * g_cov2d * j;
    let g_j: Matrix2x3<f64> = 2.0 * g_cov2d * j * cov_cam;
    let g_sigma = w.transpose() * g_cov_cam * w;
    // Σ = M Mᵀ, M = R·diag(s)
    let g_m = 2.0 * g_sigma * m;
    let mut g_scale = [0.0; 3];
    let mut g_rot = Matrix3::zeros();
    for col in 0..3 {
        for row in 0..3 {
            g_scale[col] += g_m[(row, col)] * rot[(row, col)];
            g_rot[(row, col)] = g_m[(row, col)] * scale[col];
        }
    }
    let g_qhat = rotation_vjp(&qhat, &g_rot);
    let g_q = (g_qhat - qhat * qhat.dot(&g_qhat)) / q.norm();

    // mean2d, J and depth → camera-space position
    let (iz, iz2) = (1.0 / t.z, 1.0 / (t.z * t.z));
    let iz3 = iz2 * iz;
    let mut g_t = Vector3::new(
        r[0] * fx * iz,
        r[1] * fy * iz,
        -r[0] * fx * t.x * iz2 - r[1] * fy * t.y * iz2 + r[8],
    );
    g_t.x += -g_j[(0, 2)] * fx * iz2;
    g_t.y += -g_j[(1, 2)] * fy * iz2;
    g_t.z += -g_j[(0, 0)] * fx * iz2 - g_j[(1, 1)] * fy * iz2
        + g_j[(0, 2)] * 2.0 * fx * t.x * iz3
        + g_j[(1, 2)] * 2.0 * fy * t.y * iz3;
    let g_mean = w.transpose() * g_t;
    [
        g_mean.x, g_mean.y, g_mean.z, g_q[0], g_q[1], g_q[2], g_q[3], g_scale[0], g_scale[1],
        g_scale[2],
    ]
}

fn check_rows(t: &Tensor, cols: usize, n: usize, what: &str) -> Result<()> {
    if t.shape.len() != 2 || t.shape[1] != cols || t.shape[0] != n {
        return Err(Error::invalid(format!(
            "rasterize: {what} has shape {:?}, expected [{n}, {cols}]",
            t.shape
        )));
    }
    Ok(())
}

/// Renders a list of primitives.
pub fn rasterize(gaussians: &[GaussianPrimitive], cam: &Camera, cfg: &TileConfig) -> RenderOutput {
    let d_f = gaussians.first().map_or(0, |g| g.feature.len());
    let mut cols: [Vec<f64>; 6] = Default::default();
    for g in gaussians {
        cols[0].extend(g.mean.iter());
        cols[1].extend(g.quat.iter());
        cols[2].extend(g.scale.iter());
        cols[3].extend(g.color.iter());
        cols[4].push(g.opacity);
        cols[5].extend(&g.feature);
    }
    let attrs = Attrs {
        mean: &cols[0],
        quat: &cols[1],
        scale: &cols[2],
        color: &cols[3],
        opacity: &cols[4],
        feature: &cols[5],
        d_f,
    };
    forward(&attrs, cam, cfg).0
}

/// Gaussian attribute rows on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SplatVars {
    /// `[n, 3]`
    pub mean: Var,
    /// `[n, 4]`, renormalized internally
    pub quat: Var,
    /// `[n, 3]`
    pub scale: Var,
    /// `[n, 3]`
    pub color: Var,
    /// `[n, 1]`
    pub opacity: Var,
    /// `[n, d_f]`
    pub feature: Var,
}

/// Rendered maps on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RenderVars {
    /// `[H·W, 5 + d_f]`: color, depth, feature, transmittance.
    pub packed: Var,
    /// `[H·W, 3]`
    pub color: Var,
    /// `[H·W, 1]`
    pub depth: Var,
    /// `[H·W, d_f]`
    pub feature: Var,
    /// `[H·W, 1]`
    pub transmittance: Var,
}

struct RasterizeOp {
    cam: Camera,
    cfg: TileConfig,
    d_f: usize,
}

fn attrs_of<'a>(inputs: &[&'a Tensor], d_f: usize) -> Attrs<'a> {
    Attrs {
        mean: &inputs[0].data,
        quat: &inputs[1].data,
        scale: &inputs[2].data,
        color: &inputs[3].data,
        opacity: &inputs[4].data,
        feature: &inputs[5].data,
        d_f,
    }
}

impl Op for RasterizeOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let a = attrs_of(inputs, self.d_f);
        let res = backward(&a, &self.cam, &self.cfg, g);
        let parts = [
            res.mean,
            res.quat,
            res.scale,
            res.color,
            res.opacity,
            res.feature,
        ];
        for (dst, src) in grads.iter_mut().zip(parts) {
            if let Some(dst) = dst.as_mut() {
                dst.iter_mut().zip(&src).for_each(|(x, y)| *x += y);
            }
        }
    }
}

/// Differentiable rasterization of tape-resident Gaussians.
pub fn rasterize_on_tape(
    tape: &mut Tape,
    g: &SplatVars,
    cam: &Camera,
    cfg: &TileConfig,
) -> Result<RenderVars> {
    cfg.validate()?;
    let n = tape.value(g.opacity).rows();
    let d_f = tape.value(g.feature).cols();
    check_rows(tape.value(g.mean), 3, n, "mean")?;
    check_rows(tape.value(g.quat), 4, n, "quat")?;
    check_rows(tape.value(g.scale), 3, n, "scale")?;
    check_rows(tape.value(g.color), 3, n, "color")?;
    check_rows(tape.value(g.opacity), 1, n, "opacity")?;
    if tape.value(g.feature).rows() != n {
        return Err(Error::invalid(
            "rasterize: feature rows differ from Gaussian count",
        ));
    }
    let inputs = [g.mean, g.quat, g.scale, g.color, g.opacity, g.feature];
    let (out, signature) = {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| tape.value(v)).collect();
        forward(&attrs_of(&values, d_f), cam, cfg)
    };
    tape.mark(signature);
    let hw = out.pixel_count();
    let ch = 5 + d_f;
    let mut packed = Vec::with_capacity(hw * ch);
    for p in 0..hw {
        packed.extend_from_slice(&out.color[3 * p..3 * p + 3]);
        packed.push(out.depth[p]);
        packed.extend_from_slice(&out.feature[p * d_f..(p + 1) * d_f]);
        packed.push(out.transmittance[p]);
    }
    let op = RasterizeOp {
        cam: cam.clone(),
        cfg: cfg.clone(),
        d_f,
    };
    let packed = tape.push(Tensor::matrix(hw, ch, packed)?, inputs.to_vec(), op);
    let color = slice_cols(tape, packed, 0, 3)?;
    let depth = slice_cols(tape, packed, 3, 4)?;
    let feature = if d_f > 0 {
        slice_cols(tape, packed, 4, 4 + d_f)?
    } else {
        tape.constant(Tensor::zeros(vec![hw, 0]))
    };
    let transmittance = slice_cols(tape, packed, 4 + d_f, 5 + d_f)?;
    Ok(RenderVars {
        packed,
        color,
        depth,
        feature,
        transmittance,
    })
}

/// Unpacks a tape render into a [`RenderOutput`].
impl RenderVars {
    pub fn output(&self, tape: &Tape, cam: &Camera) -> RenderOutput {
        let t = tape.value(self.packed);
        let ch = t.cols();
        let d_f = ch - 5;
        let mut out = RenderOutput::background(cam.width, cam.height, d_f, [0.0; 3]);
        for p in 0..out.pixel_count() {
            let row = t.row(p);
            out.color[3 * p..3 * p + 3].copy_from_slice(&row[0..3]);
            out.depth[p] = row[3];
            out.feature[p * d_f..(p + 1) * d_f].copy_from_slice(&row[4..4 + d_f]);
            out.transmittance[p] = row[4 + d_f];
        }
        out
    }
}
