//! Zero-padded 3×3×3 convolution over a dense voxel grid.
//!
//! Volumes are `[cells, channels]` matrices in grid id order
//! (`id = ix + X·(iy + Y·iz)`). Tap `t = (dx+1) + 3·((dy+1) + 3·(dz+1))`.

use rand::Rng;
use rayon::prelude::*;

use super::ops::Activation;
use super::tape::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::voxelizer::GridSpec;

pub const TAPS: usize = 27;

fn tap_offset(t: usize) -> (isize, isize, isize) {
    (
        (t % 3) as isize - 1,
        ((t / 3) % 3) as isize - 1,
        (t / 9) as isize - 1,
    )
}

/// Cell at `id + offset(t)`, or `None` in the zero padding.
fn neighbor(grid: &GridSpec, id: usize, t: usize, sign: isize) -> Option<usize> {
    let (ix, iy, iz) = grid.coords_of(id);
    let (dx, dy, dz) = tap_offset(t);
    let nx = ix as isize + sign * dx;
    let ny = iy as isize + sign * dy;
    let nz = iz as isize + sign * dz;
    let inside = |v: isize, n: usize| v >= 0 && (v as usize) < n;
    (inside(nx, grid.x) && inside(ny, grid.y) && inside(nz, grid.z))
        .then(|| grid.index(nx as usize, ny as usize, nz as usize))
}

/// Cells whose 3×3×3 neighbourhood intersects `mask`.
pub fn dilate(grid: &GridSpec, mask: &[bool]) -> Vec<bool> {
    (0..grid.cells())
        .map(|id| (0..TAPS).any(|t| neighbor(grid, id, t, 1).is_some_and(|n| mask[n])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    /// `[27, in, out]`
    pub kernel: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Conv3d {
    pub fn new(cin: usize, cout: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (TAPS * (cin + cout)) as f64).sqrt();
        let data = (0..TAPS * cin * cout)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            kernel: Tensor {
                shape: vec![TAPS, cin, cout],
                data,
            },
            bias: Tensor::zeros(vec![cout]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.kernel.shape[2]
    }
}

struct Conv3dOp {
    grid: GridSpec,
    cin: usize,
    cout: usize,
    mask: Option<Vec<bool>>,
}

impl Conv3dOp {
    fn active(&self, id: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[id])
    }
}

impl Op for Conv3dOp {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (x, k) = (&inputs[0].data, &inputs[1].data);
        let (cin, cout, grid) = (self.cin, self.cout, self.grid);
        let live: Vec<bool> = (0..grid.cells())
            .map(|o| self.active(o) && g[o * cout..(o + 1) * cout].iter().any(|v| *v != 0.0))
            .collect();
        if let Some(gx) = grads[0].as_mut() {
            gx.par_chunks_mut(cin).enumerate().for_each(|(n, gx_n)| {
                for t in 0..TAPS {
                    let Some(o) = neighbor(&grid, n, t, -1) else {
                        continue;
                    };
                    if !live[o] {
                        continue;
                    }
                    let g_o = &g[o * cout..(o + 1) * cout];
                    let kt = &k[t * cin * cout..(t + 1) * cin * cout];
                    for (i, gxi) in gx_n.iter_mut().enumerate() {
                        let row = &kt[i * cout..(i + 1) * cout];
                        *gxi += row.iter().zip(g_o).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            });
        }
        if let Some(gk) = grads[1].as_mut() {
            gk.par_chunks_mut(cin * cout)
                .enumerate()
                .for_each(|(t, gk_t)| {
                    for o in (0..grid.cells()).filter(|&o| live[o]) {
                        let Some(n) = neighbor(&grid, o, t, 1) else {
                            continue;
                        };
                        let g_o = &g[o * cout..(o + 1) * cout];
                        for (i, &xi) in x[n * cin..(n + 1) * cin].iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for (a, b) in gk_t[i * cout..(i + 1) * cout].iter_mut().zip(g_o) {
                                *a += xi * b;
                            }
                        }
                    }
                });
        }
        if let Some(gb) = grads[2].as_mut() {
            for o in (0..grid.cells()).filter(|&o| live[o]) {
                for (a, b) in gb.iter_mut().zip(&g[o * cout..(o + 1) * cout]) {
                    *a += b;
                }
            }
        }
    }
}

/// Pre-activation convolution. With `mask`, only cells where it is set are
/// computed; all other output rows are exactly zero.
pub fn conv3d(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    bias: Var,
    grid: GridSpec,
    mask: Option<Vec<bool>>,
) -> Result<Var> {
    let xs = &tape.value(x).shape;
    let ks = &tape.value(kernel).shape;
    if xs.len() != 2 || xs[0] != grid.cells() || ks.len() != 3 || ks[0] != TAPS || ks[1] != xs[1] {
        return Err(Error::invalid(format!(
            "conv3d: volume {xs:?} on {} cells with kernel {ks:?}",
            grid.cells()
        )));
    }
    let (cin, cout) = (ks[1], ks[2]);
    if tape.value(bias).len() != cout {
        return Err(Error::invalid(
            "conv3d: bias width differs from kernel output",
        ));
    }
    if mask.as_ref().is_some_and(|m| m.len() != grid.cells()) {
        return Err(Error::invalid(
            "conv3d: mask length differs from cell count",
        ));
    }
    let op = Conv3dOp {
        grid,
        cin,
        cout,
        mask,
    };
    let (xv, kv, bv) = (
        &tape.value(x).data,
        &tape.value(kernel).data,
        &tape.value(bias).data,
    );
    let nonzero: Vec<bool> = xv
        .chunks(cin)
        .map(|r| r.iter().any(|v| *v != 0.0))
        .collect();
    let mut out = vec![0.0; grid.cells() * cout];
    out.par_chunks_mut(cout).enumerate().for_each(|(o, out_o)| {
        if !op.active(o) {
            return;
        }
        out_o.copy_from_slice(bv);
        for t in 0..TAPS {
            let Some(n) = neighbor(&grid, o, t, 1) else {
                continue;
            };
            if !nonzero[n] {
                continue;
            }
            let kt = &kv[t * cin * cout..(t + 1) * cin * cout];
            for (i, &xi) in xv[n * cin..(n + 1) * cin].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (a, w) in out_o.iter_mut().zip(&kt[i * cout..(i + 1) * cout]) {
                    *a += xi * w;
                }
            }
        }
    });
    let value = Tensor::matrix(grid.cells(), cout, out)?;
    Ok(tape.push(value, vec![x, kernel, bias], op))
}

struct MaskRowsOp(Vec<bool>);

impl Op for MaskRowsOp {
    fn name(&self) -> &'static str {
        "mask_rows"
    }

    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let c = out.cols();
        for (r, keep) in self.0.iter().enumerate() {
            if *keep {
                for k in r * c..(r + 1) * c {
                    gx[k] += g[k];
                }
            }
        }
    }
}

/// Zeroes the rows where `keep` is false.
pub fn mask_rows(tape: &mut Tape, x: Var, keep: Vec<bool>) -> Result<Var> {
    let t = tape.value(x);
    if t.rows() != keep.len() {
        return Err(Error::invalid("mask length differs from row count"));
    }
    let c = t.cols();
    let mut data = t.data.clone();
    for (r, k) in keep.iter().enumerate() {
        if !k {
            data[r * c..(r + 1) * c].fill(0.0);
        }
    }
    let value = Tensor {
        shape: t.shape.clone(),
        data,
    };
    Ok(tape.push(value, vec![x], MaskRowsOp(keep)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradcheckConfig};
    use crate::nets::ops::{activate, sum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution used as an oracle.
    fn naive(
        grid: &GridSpec,
        x: &[f64],
        k: &[f64],
        b: &[f64],
        cin: usize,
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; grid.cells() * cout];
        for iz in 0..grid.z {
            for iy in 0..grid.y {
                for ix in 0..grid.x {
                    let o = grid.index(ix, iy, iz);
                    for c in 0..cout {
                        let mut acc = b[c];
                        for dz in -1i64..=1 {
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let (nx, ny, nz) =
                                        (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                                    if nx < 0 || ny < 0 || nz < 0 {
                                        continue;
                                    }
                                    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                                    if nx >= grid.x || ny >= grid.y || nz >= grid.z {
                                        continue;
                                    }
                                    let t = ((dx + 1) + 3 * ((dy + 1) + 3 * (dz + 1))) as usize;
                                    let n = grid.index(nx, ny, nz);
                                    for i in 0..cin {
                                        acc += x[n * cin + i] * k[(t * cin + i) * cout + c];
                                    }
                                }
                            }
                        }
                        out[o * cout + c] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_loops() {
        let grid = GridSpec::new(3, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::new(2, 3, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..grid.cells() * 2)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let b = vec![0.1, -0.2, 0.3];
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(grid.cells(), 2, x.clone()).unwrap());
        let kv = tape.constant(conv.kernel.clone());
        let bv = tape.constant(Tensor::new(vec![3], b.clone()).unwrap());
        let y = conv3d(&mut tape, xv, kv, bv, grid, None).unwrap();
        let expect = naive(&grid, &x, &conv.kernel.data, &b, 2, 3);
        for (a, e) in tape.value(y).data.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn center_tap_identity_reproduces_input() {
        let grid = GridSpec::cube(4).unwrap();
        let mut kernel = Tensor::zeros(vec![TAPS, 2, 2]);
        let center = 13;
        kernel.data[center * 4] = 1.0;
        kernel.data[center * 4 + 3] = 1.0;
        let x: Vec<f64> = (0..grid.cells() * 2)
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(grid.cells(), 2, x.clone()).unwrap());
        let kv = tape.constant(kernel);
        let bv = tape.constant(Tensor::zeros(vec![2]));
        let y = conv3d(&mut tape, xv, kv, bv, grid, None).unwrap();
        assert_eq!(tape.value(y).data, x);
    }

    #[test]
    fn masked_cells_are_zero_and_rest_unchanged() {
        let grid = GridSpec::cube(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let conv = Conv3d::new(2, 2, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..grid.cells() * 2)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mask: Vec<bool> = (0..grid.cells()).map(|i| i % 4 == 1).collect();
        let run = |mask: Option<Vec<bool>>| {
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::matrix(grid.cells(), 2, x.clone()).unwrap());
            let kv = tape.constant(conv.kernel.clone());
            let bv = tape.constant(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
            let y = conv3d(&mut tape, xv, kv, bv, grid, mask).unwrap();
            tape.value(y).data.clone()
        };
        let full = run(None);
        let part = run(Some(mask.clone()));
        for (id, m) in mask.iter().enumerate() {
            for c in 0..2 {
                let v = part[id * 2 + c];
                assert_eq!(v, if *m { full[id * 2 + c] } else { 0.0 });
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let grid = GridSpec::cube(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let conv = Conv3d::new(2, 2, Activation::Tanh, &mut rng);
        let x = Tensor::matrix(
            grid.cells(),
            2,
            (0..grid.cells() * 2)
                .map(|i| {
                    if i % 3 == 0 {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect(),
        )
        .unwrap();
        let bias = Tensor::new(vec![2], vec![0.1, -0.3]).unwrap();
        let mask: Vec<bool> = (0..grid.cells()).map(|i| i % 5 != 0).collect();
        let inputs = vec![x, conv.kernel.clone(), bias];
        let report = check_gradients(&inputs, &GradcheckConfig::default(), |t, v| {
            let y = conv3d(t, v[0], v[1], v[2], grid, Some(mask.clone()))?;
            let y = activate(t, y, Activation::Tanh);
            let y = mask_rows(t, y, mask.clone())?;
            let y = activate(t, y, Activation::Sigmoid);
            Ok(sum(t, y))
        })
        .unwrap();
        assert!(report.passed(1e-5), "{report:?}");
    }

    #[test]
    fn dilation_covers_neighbours() {
        let grid = GridSpec::cube(4).unwrap();
        let mut mask = vec![false; grid.cells()];
        mask[grid.index(0, 0, 0)] = true;
        let d = dilate(&grid, &mask);
        assert_eq!(d.iter().filter(|v| **v).count(), 8);
        assert!(d[grid.index(1, 1, 1)]);
        assert!(!d[grid.index(2, 0, 0)]);
    }
}
