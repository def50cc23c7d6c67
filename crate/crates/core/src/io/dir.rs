use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::formats::{
    read_cameras, read_ppm, read_scene, write_cameras, write_ppm, write_scene, Image,
};
use super::synth::{gaussians_from_rows, gaussians_to_rows};
use super::tensor::TensorFile;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{Camera, GaussianPrimitive};
use crate::pipeline::{mock_feature_targets, SceneSample, StepRecord, View};
use crate::voxelizer::PointCloud;

pub const SCENE_FILE: &str = "scene.gxsc";
pub const CAMERA_FILE: &str = "cameras.txt";
pub const GROUND_TRUTH_FILE: &str = "gt.gxtn";

/// File name of one per-view map, e.g. `view_003.depth.gxtn`.
pub fn view_file(k: usize, kind: &str) -> String {
    match kind {
        "ppm" => format!("view_{k:03}.ppm"),
        _ => format!("view_{k:03}.{kind}.gxtn"),
    }
}

/// Writes the cloud, cameras, per-view targets and (optionally) ground truth.
/// Returns the written paths in creation order.
pub fn write_scene_dir(
    dir: &Path,
    scene: &SceneSample,
    gt: Option<&[GaussianPrimitive]>,
) -> Result<Vec<PathBuf>> {
    scene.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_scene(&scene.cloud, &put(SCENE_FILE.into()))?;
    let cams: Vec<Camera> = scene.views.iter().map(|v| v.camera.clone()).collect();
    write_cameras(&cams, &put(CAMERA_FILE.into()))?;
    for (k, v) in scene.views.iter().enumerate() {
        let (w, h) = (v.camera.width, v.camera.height);
        write_ppm(
            &Image {
                width: w,
                height: h,
                data: v.color.clone(),
            },
            &put(view_file(k, "ppm")),
        )?;
        TensorFile::f32(vec![h, w, 3], v.color.clone())?.write(&put(view_file(k, "color")))?;
        TensorFile::f32(vec![h, w], v.depth.clone())?.write(&put(view_file(k, "depth")))?;
        let valid = v.valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        TensorFile::f32(vec![h, w], valid)?.write(&put(view_file(k, "valid")))?;
        TensorFile::f32(vec![h, w, v.feature_dim], v.features.clone())?
            .write(&put(view_file(k, "feat")))?;
    }
    if let Some(gt) = gt {
        let (cols, rows) = gaussians_to_rows(gt);
        TensorFile::f64(vec![gt.len(), cols], rows)?.write(&put(GROUND_TRUTH_FILE.into()))?;
    }
    Ok(written)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::invalid(format!(
            "missing target file {}",
            path.display()
        )))
    }
}

fn read_view(dir: &Path, k: usize, camera: Camera, feature_dim: Option<usize>) -> Result<View> {
    let (w, h) = (camera.width, camera.height);
    let color_path = dir.join(view_file(k, "color"));
    let color = if color_path.is_file() {
        let t = TensorFile::read(&color_path)?;
        t.expect_dims(&view_file(k, "color"), &[h, w, 3])?;
        t.data
    } else {
        let img = read_ppm(&require(dir.join(view_file(k, "ppm")))?)?;
        if (img.width, img.height) != (w, h) {
            return Err(Error::format(
                view_file(k, "ppm"),
                format!("expected {w}x{h} image"),
            ));
        }
        img.data
    };
    let depth = TensorFile::read(&require(dir.join(view_file(k, "depth")))?)?;
    depth.expect_dims(&view_file(k, "depth"), &[h, w])?;
    let valid = TensorFile::read(&require(dir.join(view_file(k, "valid")))?)?;
    valid.expect_dims(&view_file(k, "valid"), &[h, w])?;
    if valid.data.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(
            view_file(k, "valid"),
            "validity must be 0 or 1",
        ));
    }
    let feat_path = dir.join(view_file(k, "feat"));
    let ids_path = dir.join(view_file(k, "ids"));
    let (features, dim) = if feat_path.is_file() {
        let t = TensorFile::read(&feat_path)?;
        if t.dims.len() != 3 || t.dims[..2] != [h, w] {
            return Err(Error::format(
                view_file(k, "feat"),
                format!("expected dims [{h}, {w}, d], found {:?}", t.dims),
            ));
        }
        let d = t.dims[2];
        (t.data, d)
    } else if ids_path.is_file() {
        let t = TensorFile::read(&ids_path)?;
        t.expect_dims(&view_file(k, "ids"), &[h, w])?;
        let ids: Vec<u32> = t
            .data
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                    Ok(v as u32)
                } else {
                    Err(Error::format(
                        view_file(k, "ids"),
                        format!("bad class id {v}"),
                    ))
                }
            })
            .collect::<Result<_>>()?;
        let d = feature_dim.ok_or_else(|| {
            Error::invalid(format!(
                "{} needs a known feature width",
                ids_path.display()
            ))
        })?;
        (mock_feature_targets(&ids, w, h, d)?, d)
    } else {
        return Err(Error::invalid(format!(
            "missing target file {} (or {})",
            feat_path.display(),
            ids_path.display()
        )));
    };
    Ok(View {
        camera,
        color,
        depth: depth.data,
        valid: valid.data.iter().map(|&v| v == 1.0).collect(),
        features,
        feature_dim: dim,
    })
}

/// Loads a scene directory. Views that only carry semantic ids get mock
/// feature targets of width `feature_dim`.
pub fn read_scene_dir(dir: &Path, feature_dim: Option<usize>) -> Result<SceneSample> {
    let cloud = read_scene(&require(dir.join(SCENE_FILE))?)?;
    let cameras = read_cameras(&require(dir.join(CAMERA_FILE))?)?;
    if cameras.is_empty() {
        return Err(Error::invalid(format!(
            "{} lists no cameras",
            dir.join(CAMERA_FILE).display()
        )));
    }
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(k, c)| read_view(dir, k, c, feature_dim))
        .collect::<Result<Vec<_>>>()?;
    let scene = SceneSample { cloud, views };
    scene.validate()?;
    Ok(scene)
}

pub fn read_ground_truth(dir: &Path) -> Result<Vec<GaussianPrimitive>> {
    let t = TensorFile::read(&require(dir.join(GROUND_TRUTH_FILE))?)?;
    if t.dims.len() != 2 {
        return Err(Error::format(
            GROUND_TRUTH_FILE,
            format!("expected a matrix, found {:?}", t.dims),
        ));
    }
    gaussians_from_rows(t.dims[1], &t.data)
}

/// Scene directories under `root`: `root` itself if it holds a scene file,
/// otherwise its immediate subdirectories that do, sorted by name.
pub fn find_scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(SCENE_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(root, e))?.path();
        if p.join(SCENE_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no scenes found under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Rigidly rotates a scene about the vertical axis through its bounding-box
/// center and, with probability ½, mirrors it along x. Cameras follow so
/// every target map stays valid; a mirror also flips the images.
pub fn augment_scene(scene: &SceneSample, seed: u64) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let flip = rng.random_bool(0.5);
    Ok(transform_scene(scene, angle, flip))
}

pub(crate) fn transform_scene(scene: &SceneSample, angle: f64, flip: bool) -> SceneSample {
    let (c, s) = (angle.cos(), angle.sin());
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    let a = if flip { mirror * rot } else { rot };
    let (lo, hi) = scene.cloud.bounds();
    let center = (Vector3::from(lo) + Vector3::from(hi)) / 2.0;

    let coords = scene
        .cloud
        .coords
        .iter()
        .map(|p| (a * (Vector3::from(*p) - center) + center).into())
        .collect();
    let attrs = scene
        .cloud
        .attrs
        .iter()
        .map(|at| {
            let n = a * Vector3::new(at[3], at[4], at[5]);
            [at[0], at[1], at[2], n.x, n.y, n.z]
        })
        .collect();
    let views = scene
        .views
        .iter()
        .map(|v| {
            let cam = &v.camera;
            let r1 = cam.rotation * a.transpose();
            let t1 = cam.translation + cam.rotation * center - r1 * center;
            if !flip {
                return View {
                    camera: Camera {
                        rotation: r1,
                        translation: t1,
                        ..cam.clone()
                    },
                    ..v.clone()
                };
            }
            let (w, h, d) = (cam.width, cam.height, v.feature_dim);
            let mirror_rows = |data: &[f64], ch: usize| -> Vec<f64> {
                let mut out = Vec::with_capacity(data.len());
                for y in 0..h {
                    for x in (0..w).rev() {
                        out.extend_from_slice(&data[(y * w + x) * ch..(y * w + x + 1) * ch]);
                    }
                }
                out
            };
            let valid: Vec<f64> = v.valid.iter().map(|&b| b as u8 as f64).collect();
            View {
                camera: Camera {
                    rotation: mirror * r1,
                    translation: mirror * t1,
                    cx: (w as f64 - 1.0) - cam.cx,
                    ..cam.clone()
                },
                color: mirror_rows(&v.color, 3),
                depth: mirror_rows(&v.depth, 1),
                valid: mirror_rows(&valid, 1).iter().map(|&x| x == 1.0).collect(),
                features: mirror_rows(&v.features, d),
                feature_dim: d,
            }
        })
        .collect();
    SceneSample {
        cloud: PointCloud { coords, attrs },
        views,
    }
}

pub const METRICS_HEADER: &str = "step,l_img,l_dep,l_sem,total,psnr";

pub fn metrics_csv(log: &[StepRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in log {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.step, r.l_img, r.l_dep, r.l_sem, r.total, r.psnr
        ));
    }
    s
}

pub fn write_metrics_csv(path: &Path, log: &[StepRecord]) -> Result<()> {
    write_atomic(path, metrics_csv(log).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{synth_scene, SynthSpec};
    use crate::voxelizer::GridSpec;

    fn spec() -> SynthSpec {
        SynthSpec {
            width: 16,
            height: 12,
            feature_dim: 6,
            points_per_blob: 32,
            ..SynthSpec::new(3, GridSpec::cube(8).unwrap(), 2, 4)
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, gt) = synth_scene(&spec()).unwrap();
        let written = write_scene_dir(dir.path(), &scene, Some(&gt)).unwrap();
        assert_eq!(written.len(), 2 + 5 * 2 + 1);
        assert_eq!(read_scene_dir(dir.path(), None).unwrap(), scene);
        assert_eq!(read_ground_truth(dir.path()).unwrap(), gt);
        assert_eq!(
            find_scene_dirs(dir.path()).unwrap(),
            vec![dir.path().to_path_buf()]
        );
    }

    #[test]
    fn missing_targets_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, _) = synth_scene(&spec()).unwrap();
        write_scene_dir(dir.path(), &scene, None).unwrap();
        std::fs::remove_file(dir.path().join(view_file(1, "depth"))).unwrap();
        let err = read_scene_dir(dir.path(), None).unwrap_err().to_string();
        assert!(err.contains("view_001.depth.gxtn"), "{err}");
    }

    #[test]
    fn semantic_ids_feed_the_mock_model() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, _) = synth_scene(&spec()).unwrap();
        write_scene_dir(dir.path(), &scene, None).unwrap();
        for k in 0..2 {
            std::fs::remove_file(dir.path().join(view_file(k, "feat"))).unwrap();
            let ids: Vec<f64> = (0..16 * 12).map(|p| (p % 5) as f64).collect();
            TensorFile::f32(vec![12, 16], ids)
                .unwrap()
                .write(&dir.path().join(view_file(k, "ids")))
                .unwrap();
        }
        assert!(read_scene_dir(dir.path(), None).is_err());
        let loaded = read_scene_dir(dir.path(), Some(6)).unwrap();
        assert_eq!(loaded.feature_dim(), 6);
    }

    #[test]
    fn subdirectories_are_discovered_in_order() {
        let root = tempfile::tempdir().unwrap();
        let (scene, _) = synth_scene(&spec()).unwrap();
        for name in ["b", "a"] {
            write_scene_dir(&root.path().join(name), &scene, None).unwrap();
        }
        std::fs::create_dir(root.path().join("empty")).unwrap();
        let found = find_scene_dirs(root.path()).unwrap();
        assert_eq!(found, vec![root.path().join("a"), root.path().join("b")]);
        assert!(find_scene_dirs(&root.path().join("empty")).is_err());
    }

    #[test]
    fn augmentation_keeps_points_on_the_same_pixels() {
        let (scene, _) = synth_scene(&spec()).unwrap();
        for flip in [false, true] {
            let aug = transform_scene(&scene, 1.1, flip);
            for (v0, v1) in scene.views.iter().zip(&aug.views) {
                v1.camera.validate(1e-9).unwrap();
                for (p0, p1) in scene.cloud.coords.iter().zip(&aug.cloud.coords).step_by(7) {
                    let t0 = v0.camera.world_to_camera(&Vector3::from(*p0));
                    let t1 = v1.camera.world_to_camera(&Vector3::from(*p1));
                    let (u0, u1) = (v0.camera.project_point(&t0), v1.camera.project_point(&t1));
                    let expect_u = if flip { 15.0 - u0.x } else { u0.x };
                    assert!((t0.z - t1.z).abs() < 1e-12);
                    assert!((u1.x - expect_u).abs() < 1e-9 && (u1.y - u0.y).abs() < 1e-9);
                }
                if flip {
                    assert_eq!(v1.color[0..3], v0.color[3 * 15..3 * 16]);
                }
            }
            assert!(aug.validate().is_ok());
        }
        assert_eq!(
            augment_scene(&scene, 3).unwrap(),
            augment_scene(&scene, 3).unwrap()
        );
    }

    #[test]
    fn metrics_csv_layout() {
        let rec = StepRecord {
            epoch: 0,
            step: 1,
            l_img: 0.5,
            l_dep: 0.25,
            l_sem: 1.0,
            total: 1.75,
            psnr: f64::INFINITY,
        };
        assert_eq!(
            metrics_csv(&[rec]),
            "step,l_img,l_dep,l_sem,total,psnr\n1,0.5,0.25,1.0,1.75,inf\n"
        );
    }
}
