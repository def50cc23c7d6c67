//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::nets::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Absolute disagreement always accepted (roundoff floor of the
    /// difference quotient).
    pub atol: f64,
    /// Number of times the step is divided by ten when a perturbation
    /// crosses a branch (ReLU kink, culling or pruning boundary).
    pub max_shrink: u32,
    /// Upper bound on checked coordinates per input; evenly strided.
    pub max_per_input: Option<usize>,
    /// Multiplies analytic gradients before comparison. Test hook only.
    pub perturb: f64,
    /// Combine the differences at `h` and `h/2` to cancel the `h²` error
    /// term of the central difference.
    pub richardson: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            atol: 1e-7,
            max_shrink: 3,
            max_per_input: None,
            perturb: 1.0,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputStats {
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub inputs: Vec<InputStats>,
    pub worst: Option<Mismatch>,
}

impl GradcheckReport {
    pub fn max_rel(&self) -> f64 {
        self.inputs.iter().map(|s| s.max_rel).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.inputs.iter().map(|s| s.max_abs).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|s| s.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.inputs.iter().map(|s| s.skipped).sum()
    }

    pub fn passed(&self, rel_tol: f64) -> bool {
        self.max_rel() <= rel_tol
    }

    /// Merged statistics of the inputs in `range`.
    pub fn group(&self, range: std::ops::Range<usize>) -> InputStats {
        let mut out = InputStats::default();
        for s in &self.inputs[range] {
            out.max_rel = out.max_rel.max(s.max_rel);
            out.max_abs = out.max_abs.max(s.max_abs);
            out.checked += s.checked;
            out.skipped += s.skipped;
        }
        out
    }
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let v = tape.value(root);
    if v.len() != 1 {
        return Err(Error::invalid("gradcheck function must return a scalar"));
    }
    Ok((v.data[0], tape.signature()))
}

/// Central difference quotient, or `None` if either side leaves the base
/// branch set.
fn central<F>(
    probe: &mut [Tensor],
    k: usize,
    idx: usize,
    h: f64,
    base_sig: u64,
    f: &F,
) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let x0 = probe[k].data[idx];
    probe[k].data[idx] = x0 + h;
    let (fp, sp) = evaluate(probe, f)?;
    probe[k].data[idx] = x0 - h;
    let (fm, sm) = evaluate(probe, f)?;
    probe[k].data[idx] = x0;
    Ok((sp == base_sig && sm == base_sig).then(|| (fp - fm) / (2.0 * h)))
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences, coordinate by coordinate.
///
/// A coordinate whose perturbed evaluations take a different set of
/// discrete branches than the base point is retried with smaller steps and
/// skipped (counted in `skipped`) if no step keeps the branch set fixed.
pub fn check_gradients<F>(inputs: &[Tensor], cfg: &GradcheckConfig, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base_sig = tape.signature();
    let grads = tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(&tape, v)).collect();
    drop(tape);

    let mut report = GradcheckReport::default();
    let mut worst_rel = -1.0;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = match cfg.max_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut stats = InputStats::default();
        for idx in (0..n).step_by(stride) {
            let mut h = cfg.step;
            let mut numeric = None;
            for _ in 0..=cfg.max_shrink {
                let Some(d) = central(&mut probe, k, idx, h, base_sig, &f)? else {
                    h *= 0.1;
                    continue;
                };
                if !cfg.richardson {
                    numeric = Some(d);
                    break;
                }
                if let Some(d2) = central(&mut probe, k, idx, 0.5 * h, base_sig, &f)? {
                    numeric = Some((4.0 * d2 - d) / 3.0);
                    break;
                }
                h *= 0.1;
            }
            let Some(numeric) = numeric else {
                stats.skipped += 1;
                continue;
            };
            let a = analytic[k][idx] * cfg.perturb;
            let abs = (a - numeric).abs();
            let rel = if abs <= cfg.atol {
                0.0
            } else {
                abs / a.abs().max(numeric.abs())
            };
            stats.checked += 1;
            stats.max_abs = stats.max_abs.max(abs);
            stats.max_rel = stats.max_rel.max(rel);
            if rel > worst_rel {
                worst_rel = rel;
                report.worst = Some(Mismatch {
                    input: k,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
        report.inputs.push(stats);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ops::{activate, mul, sum, Activation};

    #[test]
    fn detects_a_wrong_gradient() {
        let inputs = vec![Tensor::matrix(1, 3, vec![0.3, -0.7, 1.1]).unwrap()];
        let f = |t: &mut Tape, v: &[Var]| {
            let s = activate(t, v[0], Activation::Sigmoid);
            let p = mul(t, s, v[0])?;
            Ok(sum(t, p))
        };
        let ok = check_gradients(&inputs, &GradcheckConfig::default(), f).unwrap();
        assert!(ok.passed(1e-6), "{ok:?}");
        let cfg = GradcheckConfig {
            perturb: 1.01,
            ..Default::default()
        };
        let bad = check_gradients(&inputs, &cfg, f).unwrap();
        assert!(!bad.passed(1e-3));
    }

    #[test]
    fn kink_coordinates_are_skipped_not_failed() {
        // ReLU evaluated exactly at its kink: every step crosses the branch.
        let inputs = vec![Tensor::matrix(1, 2, vec![0.0, 0.5]).unwrap()];
        let report = check_gradients(&inputs, &GradcheckConfig::default(), |t, v| {
            let r = activate(t, v[0], Activation::Relu);
            Ok(sum(t, r))
        })
        .unwrap();
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.checked(), 1);
        assert!(report.passed(1e-8));
    }
}
