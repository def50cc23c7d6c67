use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotation, Camera, GaussianPrimitive, DEFAULT_NEAR};
use crate::pipeline::{SceneSample, View};
use crate::splatter::{brute_force_render, TileConfig};
use crate::voxelizer::{GridSpec, PointCloud};

/// Parameters of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub blobs: usize,
    /// Blob scales are drawn relative to this grid's voxel edge.
    pub grid: GridSpec,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Width of the one-hot class embedding carried by each blob.
    pub feature_dim: usize,
    pub points_per_blob: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(blobs: usize, grid: GridSpec, views: usize, seed: u64) -> Self {
        Self {
            blobs,
            grid,
            views,
            width: 64,
            height: 64,
            feature_dim: 64,
            points_per_blob: 512,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blobs == 0 || self.views == 0 || self.points_per_blob == 0 {
            return Err(Error::invalid(
                "synth needs at least one blob, one view and one point per blob",
            ));
        }
        if self.width == 0 || self.height == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(
                "image size and feature width must be positive",
            ));
        }
        Ok(())
    }
}

/// Orbit radius and vertical field of view of generated cameras.
const ORBIT_RADIUS: f64 = 1.8;
const FOV_Y_DEG: f64 = 45.0;
const ELEVATIONS: [f64; 2] = [0.35, 0.6];
/// Depth is trusted where less than half the light passes through.
pub const VALID_TRANSMITTANCE: f64 = 0.5;

fn f32r(v: f64) -> f64 {
    v as f32 as f64
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    f32r(rng.random_range(lo..hi))
}

/// Class embedding: one-hot at `class mod dim`.
pub fn class_embedding(class: usize, dim: usize) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    f[class % dim] = 1.0;
    f
}

fn sample_blob(rng: &mut ChaCha8Rng, index: usize, spec: &SynthSpec) -> Result<GaussianPrimitive> {
    let edge = spec.grid.voxel_edge();
    let mean = [0; 3].map(|_| uniform(rng, 0.25, 0.75));
    let scale = [0; 3].map(|_| uniform(rng, 1.0, 2.0) * edge);
    let mut quat = [0.0; 4];
    loop {
        for q in &mut quat {
            *q = rng.sample::<f64, _>(StandardNormal);
        }
        let n = quat.iter().map(|q| q * q).sum::<f64>().sqrt();
        if n > 1e-3 {
            quat = quat.map(|q| q / n);
            break;
        }
    }
    let color = [0; 3].map(|_| uniform(rng, 0.1, 0.9));
    let opacity = uniform(rng, 0.6, 0.9);
    GaussianPrimitive::new(
        mean,
        quat,
        scale,
        color,
        opacity,
        class_embedding(index, spec.feature_dim),
    )
}

/// Points drawn from the blob's density truncated at two standard
/// deviations; normals are the gradient directions of the Mahalanobis form.
fn sample_points(
    rng: &mut ChaCha8Rng,
    g: &GaussianPrimitive,
    count: usize,
    out: &mut PointCloud,
) -> Result<()> {
    let q = g.quat;
    let rot = quat_to_rotation([q[0], q[1], q[2], q[3]])?;
    let s = g.scale;
    for _ in 0..count {
        let z = loop {
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            if z.norm() <= 2.0 {
                break z;
            }
        };
        let p = g.mean + rot * z.component_mul(&s);
        let n = rot * z.component_div(&s);
        let n = n.try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
        out.coords.push([f32r(p.x), f32r(p.y), f32r(p.z)]);
        out.attrs.push([
            f32r(g.color.x),
            f32r(g.color.y),
            f32r(g.color.z),
            f32r(n.x),
            f32r(n.y),
            f32r(n.z),
        ]);
    }
    Ok(())
}

fn orbit_cameras(
    rng: &mut ChaCha8Rng,
    target: Vector3<f64>,
    spec: &SynthSpec,
) -> Result<Vec<Camera>> {
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let f = 0.5 * spec.height as f64 / (FOV_Y_DEG.to_radians() / 2.0).tan();
    (0..spec.views)
        .map(|k| {
            let az = phase + std::f64::consts::TAU * k as f64 / spec.views as f64;
            let el = ELEVATIONS[k % 2];
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Camera::look_at(
                target + dir * ORBIT_RADIUS,
                target,
                Vector3::z(),
                f,
                f,
                spec.width,
                spec.height,
                DEFAULT_NEAR,
            )
        })
        .collect()
}

/// Single-precision targets of one view rendered from ground truth.
pub fn render_targets(gt: &[GaussianPrimitive], camera: &Camera) -> View {
    let out = brute_force_render(gt, camera, &TileConfig::default());
    let r = |v: &[f64]| v.iter().map(|&x| f32r(x)).collect::<Vec<_>>();
    View {
        camera: camera.clone(),
        color: r(&out.color),
        depth: r(&out.depth),
        valid: out
            .transmittance
            .iter()
            .map(|&t| t < VALID_TRANSMITTANCE)
            .collect(),
        features: r(&out.feature),
        feature_dim: out.feature_dim,
    }
}

/// A random scene plus the Gaussians its targets were rendered from.
pub fn synth_scene(spec: &SynthSpec) -> Result<(SceneSample, Vec<GaussianPrimitive>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gt: Vec<GaussianPrimitive> = (0..spec.blobs)
        .map(|i| sample_blob(&mut rng, i, spec))
        .collect::<Result<_>>()?;
    let mut cloud = PointCloud {
        coords: Vec::new(),
        attrs: Vec::new(),
    };
    for g in &gt {
        sample_points(&mut rng, g, spec.points_per_blob, &mut cloud)?;
    }
    cloud.validate()?;
    let centroid = gt.iter().map(|g| g.mean).sum::<Vector3<f64>>() / gt.len() as f64;
    let cameras = orbit_cameras(&mut rng, centroid, spec)?;
    let views = cameras.iter().map(|c| render_targets(&gt, c)).collect();
    Ok((SceneSample { cloud, views }, gt))
}

/// Row layout of stored ground truth: mean, quat, scale, color, opacity, feature.
pub const GT_FIXED_COLUMNS: usize = 14;

pub fn gaussians_to_rows(gs: &[GaussianPrimitive]) -> (usize, Vec<f64>) {
    let d = gs.first().map_or(0, |g| g.feature.len());
    let mut out = Vec::with_capacity(gs.len() * (GT_FIXED_COLUMNS + d));
    for g in gs {
        out.extend(g.mean.iter());
        out.extend(g.quat.iter());
        out.extend(g.scale.iter());
        out.extend(g.color.iter());
        out.push(g.opacity);
        out.extend(&g.feature);
    }
    (GT_FIXED_COLUMNS + d, out)
}

pub fn gaussians_from_rows(cols: usize, data: &[f64]) -> Result<Vec<GaussianPrimitive>> {
    if cols < GT_FIXED_COLUMNS || data.len() % cols != 0 {
        return Err(Error::format(
            "ground truth",
            format!("rows of width {cols} cannot hold Gaussians"),
        ));
    }
    data.chunks(cols)
        .map(|r| {
            // stored quaternions are already unit length; keep them verbatim
            let mut g = GaussianPrimitive::new(
                [r[0], r[1], r[2]],
                [r[3], r[4], r[5], r[6]],
                [r[7], r[8], r[9]],
                [r[10], r[11], r[12]],
                r[13],
                r[14..].to_vec(),
            )
            .map_err(|e| Error::format("ground truth", e.to_string()))?;
            g.quat = Vector4::new(r[3], r[4], r[5], r[6]);
            Ok(g)
        })
        .collect()
}

/// Projection of a world point for quick brightness checks.
pub fn project(camera: &Camera, p: &Vector3<f64>) -> (f64, f64) {
    let t = camera.world_to_camera(p);
    let uv = camera.project_point(&t);
    (uv.x, uv.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(blobs: usize, views: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            width: 24,
            height: 20,
            feature_dim: 8,
            points_per_blob: 64,
            ..SynthSpec::new(blobs, GridSpec::cube(16).unwrap(), views, seed)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_scene(&small(3, 2, 5)).unwrap();
        let b = synth_scene(&small(3, 2, 5)).unwrap();
        let c = synth_scene(&small(3, 2, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn targets_reproduce_from_ground_truth() {
        let (scene, gt) = synth_scene(&small(4, 3, 11)).unwrap();
        for v in &scene.views {
            assert_eq!(&render_targets(&gt, &v.camera), v);
        }
        let (cols, rows) = gaussians_to_rows(&gt);
        assert_eq!(gaussians_from_rows(cols, &rows).unwrap(), gt);
    }

    #[test]
    fn scene_is_well_formed() {
        let spec = small(5, 4, 2);
        let (scene, gt) = synth_scene(&spec).unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.cloud.len(), 5 * 64);
        assert_eq!(scene.views.len(), 4);
        assert!(scene.views.iter().all(|v| v.valid.iter().any(|&b| b)));
        for g in &gt {
            assert!(g.mean.iter().all(|m| (0.25..0.75).contains(m)));
        }
        assert!(synth_scene(&small(0, 1, 0)).is_err());
    }

    #[test]
    fn single_blob_peaks_at_its_projection() {
        let spec = SynthSpec {
            width: 33,
            height: 33,
            ..small(1, 1, 9)
        };
        let (scene, gt) = synth_scene(&spec).unwrap();
        let v = &scene.views[0];
        let (u, w) = project(&v.camera, &gt[0].mean);
        let bright = |p: usize| v.color[3 * p] + v.color[3 * p + 1] + v.color[3 * p + 2];
        let best = (0..v.pixel_count())
            .max_by(|&a, &b| bright(a).total_cmp(&bright(b)))
            .unwrap();
        assert_eq!(
            (best % 33, best / 33),
            (u.round() as usize, w.round() as usize)
        );
        assert_eq!((best % 33, best / 33), (16, 16));
    }
}
