//! Differentiable tensor operations recorded on a [`Tape`].
//!
//! Matrices are `[rows, cols]` row-major. Operations validate shapes and
//! return `InvalidInput` on mismatch.

use rayon::prelude::*;

use super::tape::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::voxelizer::scatter_mean_rows;

/// Rows per work unit in parallel row loops; fixed so reductions do not
/// depend on the worker count.
pub(crate) const ROW_CHUNK: usize = 128;

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::invalid(format!(
            "{what} must be a matrix, got shape {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            _ => return Err(Error::invalid(format!("unknown activation `{s}`"))),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, floored at the smallest normal number so it stays positive.
pub fn softplus(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(f64::MIN_POSITIVE)
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Hashes the sign pattern of `xs` into the tape's branch signature.
pub(crate) fn mark_signs(tape: &mut Tape, xs: &[f64]) {
    let mut word = 0u64;
    for (i, x) in xs.iter().enumerate() {
        word = (word << 1) | u64::from(*x > 0.0);
        if i % 64 == 63 {
            tape.mark(word);
            word = 0;
        }
    }
    tape.mark(word ^ xs.len() as u64);
}

// ---------------------------------------------------------------------------

struct LinearOp {
    rows: usize,
    din: usize,
    dout: usize,
}

impl Op for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (x, w) = (&inputs[0].data, &inputs[1].data);
        let (din, dout) = (self.din, self.dout);
        if let Some(gx) = grads[0].as_mut() {
            gx.par_chunks_mut(din * ROW_CHUNK)
                .zip(g.par_chunks(dout * ROW_CHUNK))
                .for_each(|(gx, g)| {
                    for (gx_r, g_r) in gx.chunks_mut(din).zip(g.chunks(dout)) {
                        for (i, gxi) in gx_r.iter_mut().enumerate() {
                            let w_i = &w[i * dout..(i + 1) * dout];
                            *gxi += w_i.iter().zip(g_r).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
        }
        let need_w = grads[1].is_some();
        let need_b = grads[2].is_some();
        if !(need_w || need_b) {
            return;
        }
        let partials: Vec<(Vec<f64>, Vec<f64>)> = x
            .par_chunks(din * ROW_CHUNK)
            .zip(g.par_chunks(dout * ROW_CHUNK))
            .map(|(x, g)| {
                let mut pw = if need_w {
                    vec![0.0; din * dout]
                } else {
                    Vec::new()
                };
                let mut pb = vec![0.0; dout];
                for (x_r, g_r) in x.chunks(din).zip(g.chunks(dout)) {
                    if need_w {
                        for (i, &xi) in x_r.iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for (a, b) in pw[i * dout..(i + 1) * dout].iter_mut().zip(g_r) {
                                *a += xi * b;
                            }
                        }
                    }
                    for (a, b) in pb.iter_mut().zip(g_r) {
                        *a += b;
                    }
                }
                (pw, pb)
            })
            .collect();
        debug_assert!(self.rows == 0 || !partials.is_empty());
        for (pw, pb) in partials {
            if let Some(gw) = grads[1].as_mut() {
                gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
            }
            if let Some(gb) = grads[2].as_mut() {
                gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
            }
        }
    }
}

/// `x·W + b` for `x: [n, din]`, `W: [din, dout]`, `b: [dout]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (n, din) = as_matrix(tape.value(x), "linear input")?;
    let (win, dout) = as_matrix(tape.value(w), "linear weight")?;
    if win != din || tape.value(b).len() != dout {
        return Err(Error::invalid(format!(
            "linear: input width {din}, weight {win}×{dout}, bias {}",
            tape.value(b).len()
        )));
    }
    let (xv, wv, bv) = (
        &tape.value(x).data,
        &tape.value(w).data,
        &tape.value(b).data,
    );
    let mut out = vec![0.0; n * dout];
    out.par_chunks_mut(dout * ROW_CHUNK)
        .zip(xv.par_chunks(din * ROW_CHUNK))
        .for_each(|(o, x)| {
            for (o_r, x_r) in o.chunks_mut(dout).zip(x.chunks(din)) {
                o_r.copy_from_slice(bv);
                for (i, &xi) in x_r.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (a, wv) in o_r.iter_mut().zip(&wv[i * dout..(i + 1) * dout]) {
                        *a += xi * wv;
                    }
                }
            }
        });
    let value = Tensor::matrix(n, dout, out)?;
    Ok(tape.push(value, vec![x, w, b], LinearOp { rows: n, din, dout }))
}

struct ActivationOp(Activation);

impl Op for ActivationOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        if let Some(gx) = grads[0].as_mut() {
            for (((gx, &x), &y), &g) in gx.iter_mut().zip(&inputs[0].data).zip(&out.data).zip(g) {
                *gx += g * self.0.derivative(x, y);
            }
        }
    }
}

pub fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    if act == Activation::Identity {
        return x;
    }
    let input = tape.value(x);
    let value = Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| act.apply(v)).collect(),
    };
    if act == Activation::Relu {
        let data = input.data.clone();
        mark_signs(tape, &data);
    }
    tape.push(value, vec![x], ActivationOp(act))
}

struct ConcatColsOp {
    ca: usize,
    cb: usize,
}

impl Op for ConcatColsOp {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (ca, cb) = (self.ca, self.cb);
        for (r, g_r) in g.chunks(ca + cb).enumerate() {
            if let Some(ga) = grads[0].as_mut() {
                ga[r * ca..(r + 1) * ca]
                    .iter_mut()
                    .zip(&g_r[..ca])
                    .for_each(|(a, b)| *a += b);
            }
            if let Some(gb) = grads[1].as_mut() {
                gb[r * cb..(r + 1) * cb]
                    .iter_mut()
                    .zip(&g_r[ca..])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
}

/// `[a | b]` along columns.
pub fn concat_cols(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ra, ca) = as_matrix(tape.value(a), "concat lhs")?;
    let (rb, cb) = as_matrix(tape.value(b), "concat rhs")?;
    if ra != rb {
        return Err(Error::invalid(format!("concat: {ra} vs {rb} rows")));
    }
    let (av, bv) = (&tape.value(a).data, &tape.value(b).data);
    let mut out = Vec::with_capacity(ra * (ca + cb));
    for r in 0..ra {
        out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
    }
    let value = Tensor::matrix(ra, ca + cb, out)?;
    Ok(tape.push(value, vec![a, b], ConcatColsOp { ca, cb }))
}

struct GatherRowsOp {
    index: Vec<usize>,
    cols: usize,
}

impl Op for GatherRowsOp {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let c = self.cols;
        for (k, &src) in self.index.iter().enumerate() {
            gx[src * c..(src + 1) * c]
                .iter_mut()
                .zip(&g[k * c..(k + 1) * c])
                .for_each(|(a, b)| *a += b);
        }
    }
}

/// Rows `x[index[k]]`, in order; indices may repeat.
pub fn gather_rows(tape: &mut Tape, x: Var, index: Vec<usize>) -> Result<Var> {
    let (n, c) = as_matrix(tape.value(x), "gather input")?;
    if let Some(bad) = index.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!(
            "gather index {bad} out of {n} rows"
        )));
    }
    let xv = &tape.value(x).data;
    let mut out = Vec::with_capacity(index.len() * c);
    for &i in &index {
        out.extend_from_slice(&xv[i * c..(i + 1) * c]);
    }
    let value = Tensor::matrix(index.len(), c, out)?;
    Ok(tape.push(value, vec![x], GatherRowsOp { index, cols: c }))
}

struct ScatterMeanOp {
    ids: Vec<usize>,
    counts: Vec<usize>,
    cols: usize,
}

impl Op for ScatterMeanOp {
    fn name(&self) -> &'static str {
        "scatter_mean"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let c = self.cols;
        for (i, &id) in self.ids.iter().enumerate() {
            let inv = 1.0 / self.counts[id] as f64;
            gx[i * c..(i + 1) * c]
                .iter_mut()
                .zip(&g[id * c..(id + 1) * c])
                .for_each(|(a, b)| *a += b * inv);
        }
    }
}

/// Per-cell mean of the rows of `x` grouped by `ids`; returns `[cells, c]`
/// (empty cells zero) and the occupancy counts.
pub fn scatter_mean(
    tape: &mut Tape,
    x: Var,
    ids: &[usize],
    cells: usize,
) -> Result<(Var, Vec<usize>)> {
    let (n, c) = as_matrix(tape.value(x), "scatter input")?;
    if ids.len() != n {
        return Err(Error::invalid(format!(
            "scatter: {n} rows but {} ids",
            ids.len()
        )));
    }
    if let Some(bad) = ids.iter().find(|&&id| id >= cells) {
        return Err(Error::invalid(format!(
            "scatter id {bad} outside {cells} cells"
        )));
    }
    let (data, counts) = scatter_mean_rows(&tape.value(x).data, c, ids, cells);
    let value = Tensor::matrix(cells, c, data)?;
    let op = ScatterMeanOp {
        ids: ids.to_vec(),
        counts: counts.clone(),
        cols: c,
    };
    Ok((tape.push(value, vec![x], op), counts))
}

struct NormalizeRowsOp;

impl Op for NormalizeRowsOp {
    fn name(&self) -> &'static str {
        "normalize_rows"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let Some(gx) = grads[0].as_mut() else { return };
        let c = out.cols();
        for r in 0..out.rows() {
            let x = &inputs[0].data[r * c..(r + 1) * c];
            let y = &out.data[r * c..(r + 1) * c];
            let g_r = &g[r * c..(r + 1) * c];
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yg: f64 = y.iter().zip(g_r).map(|(a, b)| a * b).sum();
            for k in 0..c {
                gx[r * c + k] += (g_r[k] - y[k] * yg) / norm;
            }
        }
    }
}

/// Scales every row to unit L2 norm. Zero rows are rejected.
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, c) = as_matrix(tape.value(x), "normalize input")?;
    let xv = &tape.value(x).data;
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = &xv[r * c..(r + 1) * c];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "row {r} has zero or non-finite norm"
            )));
        }
        out.extend(row.iter().map(|v| v / norm));
    }
    let value = Tensor::matrix(n, c, out)?;
    Ok(tape.push(value, vec![x], NormalizeRowsOp))
}

struct ScaleOp(f64);

impl Op for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += self.0 * b);
        }
    }
}

/// `k·x`.
pub fn scale(tape: &mut Tape, x: Var, k: f64) -> Var {
    let input = tape.value(x);
    let value = Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|v| k * v).collect(),
    };
    tape.push(value, vec![x], ScaleOp(k))
}

struct AddOp;

impl Op for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        for gx in grads.iter_mut().flatten() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

/// Elementwise `a + b` of equally shaped tensors.
pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape != tb.shape {
        return Err(Error::invalid(format!(
            "add: {:?} vs {:?}",
            ta.shape, tb.shape
        )));
    }
    let value = Tensor {
        shape: ta.shape.clone(),
        data: ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
    };
    Ok(tape.push(value, vec![a, b], AddOp))
}

struct MulOp;

impl Op for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (a, b) = (&inputs[0].data, &inputs[1].data);
        if let Some(ga) = grads[0].as_mut() {
            for k in 0..g.len() {
                ga[k] += g[k] * b[k];
            }
        }
        if let Some(gb) = grads[1].as_mut() {
            for k in 0..g.len() {
                gb[k] += g[k] * a[k];
            }
        }
    }
}

/// Elementwise product of equally shaped tensors.
pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape != tb.shape {
        return Err(Error::invalid(format!(
            "mul: {:?} vs {:?}",
            ta.shape, tb.shape
        )));
    }
    let value = Tensor {
        shape: ta.shape.clone(),
        data: ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
    };
    Ok(tape.push(value, vec![a, b], MulOp))
}

struct SumOp;

impl Op for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().for_each(|a| *a += g[0]);
        }
    }
}

/// Scalar sum of all elements.
pub fn sum(tape: &mut Tape, x: Var) -> Var {
    let s = tape.value(x).data.iter().sum();
    tape.push(Tensor::scalar(s), vec![x], SumOp)
}

struct SliceColsOp {
    start: usize,
    width: usize,
    cols: usize,
}

impl Op for SliceColsOp {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        for (r, g_r) in g.chunks(self.width).enumerate() {
            let base = r * self.cols + self.start;
            gx[base..base + self.width]
                .iter_mut()
                .zip(g_r)
                .for_each(|(a, b)| *a += b);
        }
    }
}

/// Columns `start..end` of a matrix.
pub fn slice_cols(tape: &mut Tape, x: Var, start: usize, end: usize) -> Result<Var> {
    let (n, c) = as_matrix(tape.value(x), "slice input")?;
    if start >= end || end > c {
        return Err(Error::invalid(format!(
            "slice {start}..{end} of {c} columns"
        )));
    }
    let width = end - start;
    let xv = &tape.value(x).data;
    let mut out = Vec::with_capacity(n * width);
    for r in 0..n {
        out.extend_from_slice(&xv[r * c + start..r * c + end]);
    }
    let value = Tensor::matrix(n, width, out)?;
    Ok(tape.push(
        value,
        vec![x],
        SliceColsOp {
            start,
            width,
            cols: c,
        },
    ))
}

struct WeightedSumOp(Vec<f64>);

impl Op for WeightedSumOp {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        for (gx, w) in grads.iter_mut().zip(&self.0) {
            if let Some(gx) = gx.as_mut() {
                gx[0] += w * g[0];
            }
        }
    }
}

/// `Σ wₖ·xₖ` over scalar nodes.
pub fn weighted_sum(tape: &mut Tape, xs: &[Var], weights: &[f64]) -> Result<Var> {
    if xs.len() != weights.len() || xs.is_empty() {
        return Err(Error::invalid("weighted_sum needs one weight per scalar"));
    }
    let mut total = 0.0;
    for (&x, w) in xs.iter().zip(weights) {
        let t = tape.value(x);
        if t.len() != 1 {
            return Err(Error::invalid("weighted_sum operands must be scalars"));
        }
        total += w * t.data[0];
    }
    Ok(tape.push(
        Tensor::scalar(total),
        xs.to_vec(),
        WeightedSumOp(weights.to_vec()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradcheckConfig};

    fn mat(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
        let data = (0..rows * cols)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn product_rule_at_three_two() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.leaf(Tensor::scalar(2.0));
        let z = mul(&mut tape, x, y).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(&tape, x), vec![2.0]);
        assert_eq!(g.get(&tape, y), vec![3.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let p = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = scale(&mut tape, x, 4.0);
        let g = tape.backward(z).unwrap();
        assert!(g.wrt(p).is_none());
        assert_eq!(g.get(&tape, p), vec![0.0, 0.0]);
        assert_eq!(g.get(&tape, x), vec![4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(2, 2, 1));
        assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(5.0));
        let y = mul(&mut tape, x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&tape, x), vec![10.0]);
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [1e-3, 0.03, 0.5, 2.0, 30.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn relu_of_identity_weight() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![2]));
        let h = linear(&mut tape, x, w, b).unwrap();
        let y = activate(&mut tape, h, Activation::Relu);
        assert_eq!(tape.value(y).data, vec![0.0, 2.0]);
    }

    fn composite(tape: &mut Tape, leaves: &[Var]) -> Result<Var> {
        let (x, w, b, extra) = (leaves[0], leaves[1], leaves[2], leaves[3]);
        let h = linear(tape, x, w, b)?;
        let h = activate(tape, h, Activation::Tanh);
        let s = activate(tape, h, Activation::Softplus);
        let g = activate(tape, s, Activation::Sigmoid);
        let c = concat_cols(tape, g, extra)?;
        let n = normalize_rows(tape, c)?;
        let sl = slice_cols(tape, n, 1, 4)?;
        let gathered = gather_rows(tape, sl, vec![2, 0, 0, 3])?;
        let (pooled, _) = scatter_mean(tape, gathered, &[1, 1, 0, 2], 3)?;
        let r = activate(tape, pooled, Activation::Relu);
        let sq = mul(tape, r, pooled)?;
        let a = add(tape, sq, pooled)?;
        let total = sum(tape, a);
        let k = scale(tape, total, 0.5);
        weighted_sum(tape, &[k, total], &[2.0, -0.25])
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let inputs = vec![mat(4, 3, 1), mat(3, 5, 2), mat(1, 5, 3), mat(4, 2, 4)];
        let inputs = inputs
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 2 {
                    Tensor::new(vec![5], t.data).unwrap()
                } else {
                    t
                }
            })
            .collect::<Vec<_>>();
        let report = check_gradients(&inputs, &GradcheckConfig::default(), composite).unwrap();
        assert!(report.passed(1e-5), "{report:?}");
    }
}
