//! Point masking, cuboid normalization, voxel hashing and scatter pooling.

use std::cmp::Ordering;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform;

/// Width of the per-point attribute vector: RGB followed by the unit normal.
pub const ATTR_WIDTH: usize = 6;

/// Padding added to the longest bounding-box edge before normalization.
pub const NORMALIZE_EPS: f64 = 1e-6;

const NORMAL_TOL: f64 = 1e-3;
const MAX_GRID_AXIS: usize = 512;
const INDEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<[f64; 3]>,
    pub attrs: Vec<[f64; ATTR_WIDTH]>,
}

impl PointCloud {
    pub fn new(coords: Vec<[f64; 3]>, attrs: Vec<[f64; ATTR_WIDTH]>) -> Result<Self> {
        let pc = Self { coords, attrs };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if self.coords.len() != self.attrs.len() {
            return Err(Error::invalid(format!(
                "{} coordinates but {} attribute rows",
                self.coords.len(),
                self.attrs.len()
            )));
        }
        for (i, (c, a)) in self.coords.iter().zip(&self.attrs).enumerate() {
            if c.iter().chain(a.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i} has non-finite values")));
            }
            if a[..3].iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("point {i} color outside [0,1]")));
            }
            let n = (a[3] * a[3] + a[4] * a[4] + a[5] * a[5]).sqrt();
            if n != 0.0 && (n - 1.0).abs() > NORMAL_TOL {
                return Err(Error::invalid(format!("point {i} normal has length {n}")));
            }
        }
        Ok(())
    }

    /// Points at the given (ascending) indices.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            attrs: indices.iter().map(|&i| self.attrs[i]).collect(),
        }
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in &self.coords {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl GridSpec {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        for (name, v) in [("X", x), ("Y", y), ("Z", z)] {
            if v == 0 || v > MAX_GRID_AXIS {
                return Err(Error::invalid(format!(
                    "grid axis {name} = {v} outside 1..={MAX_GRID_AXIS}"
                )));
            }
        }
        Ok(Self { x, y, z })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn cells(&self) -> usize {
        self.x * self.y * self.z
    }

    /// Edge of the smallest cell side in normalized units.
    pub fn voxel_edge(&self) -> f64 {
        1.0 / self.x.max(self.y).max(self.z) as f64
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.x * (iy + self.y * iz)
    }

    pub fn coords_of(&self, id: usize) -> (usize, usize, usize) {
        (id % self.x, (id / self.x) % self.y, id / (self.x * self.y))
    }

    /// Cell midpoint in `[0,1]³`.
    pub fn center(&self, id: usize) -> [f64; 3] {
        let (i, j, k) = self.coords_of(id);
        [
            (i as f64 + 0.5) / self.x as f64,
            (j as f64 + 0.5) / self.y as f64,
            (k as f64 + 0.5) / self.z as f64,
        ]
    }
}

/// `X×Y×Z×dim` grid stored cell-major (`data[id * dim + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    pub grid: GridSpec,
    pub dim: usize,
    pub data: Vec<f64>,
    pub occupied: Vec<bool>,
}

impl DenseVolume {
    pub fn zeros(grid: GridSpec, dim: usize) -> Self {
        Self {
            grid,
            dim,
            data: vec![0.0; grid.cells() * dim],
            occupied: vec![false; grid.cells()],
        }
    }

    pub fn cell(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        (0..self.grid.cells())
            .map(|id| self.grid.center(id))
            .collect()
    }

    pub fn occupied_ids(&self) -> Vec<usize> {
        self.occupied
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub ratio: f64,
    pub seed: u64,
}

/// Number of points kept out of `n` at mask ratio `ratio`.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    n - (ratio * n as f64).floor() as usize
}

/// Keeps a uniformly random subset of `n − ⌊γ·n⌋` points, in original order.
pub fn mask_points(pc: &PointCloud, cfg: &MaskConfig) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&cfg.ratio) {
        return Err(Error::invalid(format!(
            "mask ratio {} outside [0,1)",
            cfg.ratio
        )));
    }
    if pc.is_empty() {
        return Err(Error::invalid("cannot mask an empty point cloud"));
    }
    let n = pc.len();
    let keep = kept_count(n, cfg.ratio);
    if keep == n {
        return Ok(pc.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(pc.select(&idx))
}

/// Uniform similarity that fits the bounding box into the unit cube
/// (longest edge plus `NORMALIZE_EPS`) and centers it at `(½,½,½)`.
pub fn cuboid_transform(pc: &PointCloud) -> Result<SimilarityTransform> {
    if pc.is_empty() {
        return Err(Error::invalid("cannot normalize an empty point cloud"));
    }
    let (lo, hi) = pc.bounds();
    let longest = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(longest > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = 1.0 / (longest + NORMALIZE_EPS);
    let t: [f64; 3] = std::array::from_fn(|k| 0.5 - s * 0.5 * (lo[k] + hi[k]));
    SimilarityTransform::new(s, t)
}

pub fn normalize_to_cuboid(pc: &PointCloud) -> Result<(PointCloud, SimilarityTransform)> {
    let tf = cuboid_transform(pc)?;
    let coords = pc
        .coords
        .iter()
        .map(|p| {
            let q = tf.apply(&Vector3::from(*p));
            [
                q.x.clamp(0.0, 1.0),
                q.y.clamp(0.0, 1.0),
                q.z.clamp(0.0, 1.0),
            ]
        })
        .collect();
    Ok((
        PointCloud {
            coords,
            attrs: pc.attrs.clone(),
        },
        tf,
    ))
}

fn axis_cell(v: f64, n: usize) -> usize {
    ((v * n as f64).floor().max(0.0) as usize).min(n - 1)
}

/// Spatial hash `ix + X·(iy + Y·iz)` with the top face clamped into the last cell.
pub fn voxel_index(coords: &[[f64; 3]], grid: &GridSpec) -> Result<Vec<usize>> {
    coords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.iter()
                .any(|v| !(*v >= -INDEX_TOL && *v <= 1.0 + INDEX_TOL))
            {
                return Err(Error::invalid(format!(
                    "point {i} at {c:?} lies outside the unit cube"
                )));
            }
            Ok(grid.index(
                axis_cell(c[0], grid.x),
                axis_cell(c[1], grid.y),
                axis_cell(c[2], grid.z),
            ))
        })
        .collect()
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Per-cell arithmetic means of `features` (`m × dim`, row-major).
///
/// Members of a cell are summed in ascending order of their feature rows,
/// so the result is bit-identical under any permutation of the input.
/// Returns the pooled rows (`cells × dim`) and the per-cell counts.
pub(crate) fn scatter_mean_rows(
    features: &[f64],
    dim: usize,
    ids: &[usize],
    cells: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (i, &id) in ids.iter().enumerate() {
        members[id].push(i);
    }
    let mut out = vec![0.0; cells * dim];
    let mut counts = vec![0; cells];
    for (id, list) in members.iter_mut().enumerate() {
        if list.is_empty() {
            continue;
        }
        let row = |i: usize| &features[i * dim..(i + 1) * dim];
        list.sort_by(|&a, &b| cmp_rows(row(a), row(b)));
        let acc = &mut out[id * dim..(id + 1) * dim];
        for &i in list.iter() {
            for (a, v) in acc.iter_mut().zip(row(i)) {
                *a += v;
            }
        }
        let n = list.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        counts[id] = list.len();
    }
    (out, counts)
}

pub fn scatter_mean(
    features: &[f64],
    dim: usize,
    ids: &[usize],
    grid: &GridSpec,
) -> Result<DenseVolume> {
    if dim == 0 || features.len() != ids.len() * dim {
        return Err(Error::invalid(format!(
            "feature buffer of length {} does not match {} points × {dim} channels",
            features.len(),
            ids.len()
        )));
    }
    if let Some(bad) = ids.iter().find(|&&id| id >= grid.cells()) {
        return Err(Error::invalid(format!("voxel id {bad} outside grid")));
    }
    let (data, counts) = scatter_mean_rows(features, dim, ids, grid.cells());
    Ok(DenseVolume {
        grid: *grid,
        dim,
        data,
        occupied: counts.iter().map(|&c| c > 0).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub cell: usize,
    pub center: [f64; 3],
    pub feature: Vec<f64>,
}

/// One anchor per occupied cell, ascending cell id.
pub fn anchors(volume: &DenseVolume) -> Vec<Anchor> {
    volume
        .occupied_ids()
        .into_iter()
        .map(|id| Anchor {
            cell: id,
            center: volume.grid.center(id),
            feature: volume.cell(id).to_vec(),
        })
        .collect()
}
