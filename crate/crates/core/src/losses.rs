//! Photometric, masked depth and feature-alignment losses.

use crate::error::{Error, Result};
use crate::nets::ops::{mark_signs, weighted_sum};
use crate::nets::tape::{Op, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub img: f64,
    pub dep: f64,
    pub sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            img: 1.0,
            dep: 1.0,
            sem: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.img, self.dep, self.sem];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(format!(
                "loss weights {w:?} must be non-negative with at least one positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_img: f64,
    pub l_dep: f64,
    pub l_sem: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
}

fn same_len(t: &Tensor, target: &[f64], what: &str) -> Result<()> {
    if t.len() != target.len() {
        return Err(Error::invalid(format!(
            "{what}: rendered has {} values, target {}",
            t.len(),
            target.len()
        )));
    }
    Ok(())
}

/// `scale · Σ keep·|x − target|`.
struct AbsDiffOp {
    target: Vec<f64>,
    keep: Option<Vec<bool>>,
    scale: f64,
}

impl AbsDiffOp {
    fn kept(&self, i: usize) -> bool {
        self.keep.as_ref().is_none_or(|k| k[i])
    }
}

impl Op for AbsDiffOp {
    fn name(&self) -> &'static str {
        "abs_diff"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        for (i, (x, t)) in inputs[0].data.iter().zip(&self.target).enumerate() {
            if self.kept(i) {
                let d = x - t;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gx[i] += g[0] * self.scale * sign;
            }
        }
    }
}

fn abs_diff(tape: &mut Tape, x: Var, op: AbsDiffOp) -> Var {
    let xs = &tape.value(x).data;
    let mut total = 0.0;
    let mut signs = Vec::with_capacity(xs.len());
    for (i, (a, b)) in xs.iter().zip(&op.target).enumerate() {
        if op.kept(i) {
            total += (a - b).abs();
            signs.push(a - b);
        }
    }
    let value = op.scale * total;
    mark_signs(tape, &signs);
    tape.push(Tensor::scalar(value), vec![x], op)
}

/// Mean over views of the per-element mean absolute color error.
pub fn loss_img(tape: &mut Tape, rendered: &[Var], targets: &[&[f64]]) -> Result<Var> {
    if rendered.is_empty() || rendered.len() != targets.len() {
        return Err(Error::invalid(
            "loss_img needs one target per rendered view",
        ));
    }
    let m = rendered.len() as f64;
    let mut terms = Vec::with_capacity(rendered.len());
    for (&r, t) in rendered.iter().zip(targets) {
        same_len(tape.value(r), t, "loss_img")?;
        let n = t.len().max(1) as f64;
        terms.push(abs_diff(
            tape,
            r,
            AbsDiffOp {
                target: t.to_vec(),
                keep: None,
                scale: 1.0 / (n * m),
            },
        ));
    }
    weighted_sum(tape, &terms, &vec![1.0; terms.len()])
}

/// Sum of absolute depth errors over valid pixels of all views divided by
/// the number of valid pixels. Returns the loss and that count.
pub fn loss_dep(
    tape: &mut Tape,
    rendered: &[Var],
    targets: &[&[f64]],
    valid: &[&[bool]],
) -> Result<(Var, usize)> {
    if rendered.is_empty() || rendered.len() != targets.len() || targets.len() != valid.len() {
        return Err(Error::invalid(
            "loss_dep needs one target and mask per rendered view",
        ));
    }
    for ((&r, t), v) in rendered.iter().zip(targets).zip(valid) {
        same_len(tape.value(r), t, "loss_dep")?;
        if v.len() != t.len() {
            return Err(Error::invalid(
                "loss_dep: validity mask size differs from depth map",
            ));
        }
    }
    let count: usize = valid.iter().map(|v| v.iter().filter(|b| **b).count()).sum();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let mut terms = Vec::with_capacity(rendered.len());
    for ((&r, t), v) in rendered.iter().zip(targets).zip(valid) {
        terms.push(abs_diff(
            tape,
            r,
            AbsDiffOp {
                target: t.to_vec(),
                keep: Some(v.to_vec()),
                scale,
            },
        ));
    }
    Ok((weighted_sum(tape, &terms, &vec![1.0; terms.len()])?, count))
}

/// `scale · Σ_pixels (1 − cos(x_p, target_p))`; zero-norm pixels count 1.
struct CosineOp {
    target: Vec<f64>,
    dim: usize,
    scale: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Op for CosineOp {
    fn name(&self) -> &'static str {
        "cosine_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let d = self.dim;
        for (p, (a, b)) in inputs[0]
            .data
            .chunks(d)
            .zip(self.target.chunks(d))
            .enumerate()
        {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let cos = dot / (na * nb);
            let k = -g[0] * self.scale;
            for j in 0..d {
                gx[p * d + j] += k * (b[j] / (na * nb) - cos * a[j] / (na * na));
            }
        }
    }
}

/// Mean over views of the mean per-pixel cosine distance between lifted
/// feature maps `[pixels, d*]` and targets.
pub fn loss_sem(tape: &mut Tape, lifted: &[Var], targets: &[&[f64]]) -> Result<Var> {
    if lifted.is_empty() || lifted.len() != targets.len() {
        return Err(Error::invalid("loss_sem needs one target per view"));
    }
    let m = lifted.len() as f64;
    let mut terms = Vec::with_capacity(lifted.len());
    for (&x, t) in lifted.iter().zip(targets) {
        let value = tape.value(x);
        same_len(value, t, "loss_sem")?;
        let (pixels, dim) = (value.rows(), value.cols());
        if dim == 0 || pixels == 0 {
            return Err(Error::invalid("loss_sem: empty feature map"));
        }
        let scale = 1.0 / (pixels as f64 * m);
        let mut total = 0.0;
        let mut degenerate = Vec::new();
        for (a, b) in value.data.chunks(dim).zip(t.chunks(dim)) {
            let (na, nb) = (norm(a), norm(b));
            degenerate.push(if na == 0.0 || nb == 0.0 { 1.0 } else { 0.0 });
            total += if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            };
        }
        mark_signs(tape, &degenerate);
        let op = CosineOp {
            target: t.to_vec(),
            dim,
            scale,
        };
        terms.push(tape.push(Tensor::scalar(scale * total), vec![x], op));
    }
    weighted_sum(tape, &terms, &vec![1.0; terms.len()])
}

/// `λ_img·l_img + λ_dep·l_dep + λ_sem·l_sem`.
pub fn loss_total(tape: &mut Tape, img: Var, dep: Var, sem: Var, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    weighted_sum(tape, &[img, dep, sem], &[w.img, w.dep, w.sem])
}
