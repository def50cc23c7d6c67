use crate::error::{Error, Result};
use crate::nets::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            betas: (0.9, 0.95),
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::invalid(format!(
                "betas ({b1}, {b2}) must lie in [0,1)"
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::invalid("weight decay must be >= 0 and eps > 0"));
        }
        Ok(())
    }
}

/// Moment buffers mirroring the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn matches(&self, params: &[&mut Tensor]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.len() && v.len() == p.len())
    }
}

/// One decoupled-weight-decay Adam update at learning rate `lr`.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(Error::invalid(
            "optimizer state does not mirror the parameter list",
        ));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if g.len() != p.len() {
            return Err(Error::invalid(
                "gradient length differs from parameter length",
            ));
        }
        for i in 0..p.data.len() {
            p.data[i] *= 1.0 - lr * cfg.weight_decay;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 over `ceil(warmup·total)` steps, then cosine decay
/// reaching 0 at the final step.
pub fn learning_rate(base: f64, step: u64, total: u64, warmup: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warm = (warmup * total as f64).ceil() as u64;
    if step < warm {
        return base * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let grads = vec![vec![0.3, -4.0, 1e-3]];
        let mut state = OptimizerState::new(&[3]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adamw_step(&mut [&mut p], &grads, &mut state, &cfg, 0.1).unwrap();
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p.data[0] - 0.9).abs() < 1e-6);
        assert!((p.data[1] + 1.9).abs() < 1e-6);
        assert!((p.data[2] - 0.4).abs() < 1e-4);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn matches_reference_recurrence() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![1], vec![0.7]).unwrap();
        let mut state = OptimizerState::new(&[1]);
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * x - 0.3;
            let grad = vec![2.0 * p.data[0] - 0.3];
            adamw_step(&mut [&mut p], &[grad], &mut state, &cfg, 0.01).unwrap();
            x *= 1.0 - 0.01 * 0.05;
            m = 0.9 * m + 0.1 * g;
            v = 0.95 * v + 0.05 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.95f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(p.data[0], x);
        }
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut state = OptimizerState::new(&[2]);
        adamw_step(
            &mut [&mut p],
            &[vec![5.0, -5.0]],
            &mut state,
            &AdamConfig::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(p.data, vec![1.0, 2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut state = OptimizerState::new(&[3]);
        assert!(adamw_step(
            &mut [&mut p],
            &[vec![0.0; 2]],
            &mut state,
            &AdamConfig::default(),
            0.1
        )
        .is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let total = 1000;
        assert_eq!(learning_rate(0.002, 0, total, 0.05), 0.0);
        assert!((learning_rate(0.002, 25, total, 0.05) - 0.001).abs() < 1e-15);
        assert_eq!(learning_rate(0.002, 50, total, 0.05), 0.002);
        assert!(learning_rate(0.002, total - 1, total, 0.05) <= 1e-3 * 0.002);
        assert_eq!(learning_rate(0.002, 0, 0, 0.05), 0.0);
        assert_eq!(learning_rate(0.002, 3, 1, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn schedule_rises_then_falls(total in 20u64..400, warm in 0.01f64..0.5) {
            let lrs: Vec<f64> = (0..total).map(|s| learning_rate(1.0, s, total, warm)).collect();
            let peak = (warm * total as f64).ceil() as usize;
            for s in 1..lrs.len() {
                prop_assert!((0.0..=1.0).contains(&lrs[s]));
                if s <= peak.min(lrs.len() - 1) {
                    prop_assert!(lrs[s] >= lrs[s - 1]);
                } else {
                    prop_assert!(lrs[s] <= lrs[s - 1]);
                }
            }
            prop_assert_eq!(lrs[0], 0.0);
            prop_assert!(lrs[lrs.len() - 1] <= 1e-3);
        }
    }
}
