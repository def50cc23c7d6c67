use crate::error::{Error, Result, StageContext};
use crate::nets::{Model, Tape};
use crate::voxelizer::{normalize_to_cuboid, PointCloud};

/// Cosine similarity of every point's embedding to that of `query`.
///
/// A point takes the feature of the Gaussian decoded from its own voxel, or
/// of the nearest retained anchor when that voxel was pruned.
pub fn similarity_probe(model: &Model, cloud: &PointCloud, query: usize) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::invalid("similarity probe on an empty cloud"));
    }
    if query >= cloud.len() {
        return Err(Error::invalid(format!(
            "query {query} out of range ({} points)",
            cloud.len()
        )));
    }
    let (pc, _) = normalize_to_cuboid(cloud).stage("normalize")?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let fwd = vars.forward(&mut tape, &pc).stage("model")?;
    let g = &fwd.gaussians;
    if g.is_empty() {
        return Err(Error::Degenerate("every Gaussian was pruned".into()));
    }
    let grid = model.config.grid;
    let feats = tape.value(g.feature);
    let centers: Vec<[f64; 3]> = g.cells.iter().map(|&c| grid.center(c)).collect();

    let owner = |cell: usize| -> usize {
        if let Ok(i) = g.cells.binary_search(&cell) {
            return i;
        }
        let c = grid.center(cell);
        let dist = |p: &[f64; 3]| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>();
        (0..centers.len())
            .min_by(|&a, &b| {
                dist(&centers[a])
                    .total_cmp(&dist(&centers[b]))
                    .then(a.cmp(&b))
            })
            .expect("non-empty")
    };
    let owners: Vec<usize> = fwd.point_cells.iter().map(|&c| owner(c)).collect();
    let q = owners[query];
    let fq = feats.row(q);
    let nq = fq.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(owners
        .iter()
        .map(|&o| {
            if o == q {
                return 1.0;
            }
            let f = feats.row(o);
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || nq == 0.0 {
                0.0
            } else {
                (f.iter().zip(fq).map(|(a, b)| a * b).sum::<f64>() / (n * nq)).clamp(-1.0, 1.0)
            }
        })
        .collect())
}
