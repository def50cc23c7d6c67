use nalgebra::Vector2;

use super::{RenderOutput, TileConfig, ALPHA_MAX};
use crate::geometry::{project_covariance, Camera, GaussianPrimitive};

/// Per-pixel loop over every globally depth-sorted Gaussian. No tiling and
/// no culling besides the near plane.
pub fn brute_force_render(
    gaussians: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &TileConfig,
) -> RenderOutput {
    let d_f = gaussians.first().map_or(0, |g| g.feature.len());
    let mut out = RenderOutput::background(cam.width, cam.height, d_f, cfg.background);
    let mut projected: Vec<_> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_covariance(&g.mean, &g.covariance(), cam).map(|p| (i, p)))
        .collect();
    projected.sort_by(|a, b| a.1.z_cam.total_cmp(&b.1.z_cam).then(a.0.cmp(&b.0)));

    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = y * cam.width + x;
            let pixel = Vector2::new(x as f64, y as f64);
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut depth = 0.0;
            let mut feature = vec![0.0; d_f];
            for (i, pg) in &projected {
                let d = pixel - pg.mean2d;
                let q = d.dot(&(pg.conic * d));
                if cfg.support.is_some_and(|k| q > k * k) {
                    continue;
                }
                let g = &gaussians[*i];
                let alpha = (g.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                if alpha < cfg.alpha_cutoff {
                    continue;
                }
                let w = alpha * t;
                for c in 0..3 {
                    color[c] += g.color[c] * w;
                }
                depth += pg.z_cam * w;
                for (f, v) in feature.iter_mut().zip(&g.feature) {
                    *f += v * w;
                }
                t *= 1.0 - alpha;
                if t < cfg.transmittance_floor {
                    break;
                }
            }
            for c in 0..3 {
                out.color[3 * p + c] = color[c] + t * cfg.background[c];
            }
            out.depth[p] = depth;
            out.feature[p * d_f..(p + 1) * d_f].copy_from_slice(&feature);
            out.transmittance[p] = t;
        }
    }
    out
}
