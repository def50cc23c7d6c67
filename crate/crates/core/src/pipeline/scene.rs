use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::voxelizer::PointCloud;

/// A posed training view with its supervision maps, row-major over pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    /// `H·W·3` in `[0,1]`.
    pub color: Vec<f64>,
    /// `H·W`, scene units.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    /// `H·W·feature_dim` target embedding.
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl View {
    pub fn pixel_count(&self) -> usize {
        self.camera.width * self.camera.height
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if self.color.len() != 3 * n || self.depth.len() != n || self.valid.len() != n {
            return Err(Error::invalid(format!(
                "view maps do not match the {}x{} camera",
                self.camera.width, self.camera.height
            )));
        }
        if self.feature_dim == 0 || self.features.len() != n * self.feature_dim {
            return Err(Error::invalid(
                "feature target does not match the camera size",
            ));
        }
        Ok(())
    }
}

/// One scene: a point cloud plus views sharing its world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub cloud: PointCloud,
    pub views: Vec<View>,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        if self.views.is_empty() {
            return Err(Error::invalid("scene has no views"));
        }
        let d = self.views[0].feature_dim;
        for v in &self.views {
            v.validate()?;
            if v.feature_dim != d {
                return Err(Error::invalid("views disagree on feature width"));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.views.first().map_or(0, |v| v.feature_dim)
    }
}

/// `m` distinct view indices out of `total`, uniform without replacement.
pub fn sample_views(total: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > total {
        return Err(Error::invalid(format!(
            "cannot sample {m} views out of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, total, m).into_vec())
}

/// Stand-in for an external 2D feature model: one-hot class codes, summed
/// over the zero-padded 3×3 neighbourhood, divided by 9 and L2-normalized.
pub fn mock_feature_targets(
    ids: &[u32],
    width: usize,
    height: usize,
    dim: usize,
) -> Result<Vec<f64>> {
    if ids.len() != width * height {
        return Err(Error::invalid(
            "semantic id map does not match the image size",
        ));
    }
    if let Some(&bad) = ids.iter().find(|&&c| c as usize >= dim) {
        return Err(Error::invalid(format!(
            "semantic id {bad} does not fit feature width {dim}"
        )));
    }
    let mut out = vec![0.0; ids.len() * dim];
    for y in 0..height {
        for x in 0..width {
            let row = &mut out[(y * width + x) * dim..(y * width + x + 1) * dim];
            for ny in y.saturating_sub(1)..(y + 2).min(height) {
                for nx in x.saturating_sub(1)..(x + 2).min(width) {
                    row[ids[ny * width + nx] as usize] += 1.0 / 9.0;
                }
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(out)
}
