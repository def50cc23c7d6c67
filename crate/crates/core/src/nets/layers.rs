use rand::Rng;

use super::ops::{activate, linear, Activation};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform Xavier/Glorot sample of shape `[fan_in, fan_out]`.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor {
        shape: vec![fan_in, fan_out],
        data,
    }
}

/// Affine layer followed by a pointwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(din: usize, dout: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weight: xavier(din, dout, rng),
            bias: Tensor::zeros(vec![dout]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Tape handles of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl Mlp {
    /// `widths = [in, h₁, …, out]`; `hidden` after every inner layer and
    /// `output` after the last.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    /// Checks that adjacent layer widths agree and all entries are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("MLP without layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.shape.len() != 2 || l.bias.shape != [l.out_dim()] {
                return Err(Error::invalid(format!(
                    "layer {i}: malformed weight or bias"
                )));
            }
            if i > 0 && self.layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::invalid(format!(
                    "layer {i} expects width {} but receives {}",
                    l.in_dim(),
                    self.layers[i - 1].out_dim()
                )));
            }
            if l.weight
                .data
                .iter()
                .chain(&l.bias.data)
                .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.clone()),
                        tape.leaf(l.bias.clone()),
                        l.activation,
                    )
                })
                .collect(),
        }
    }
}

impl MlpVars {
    /// Parameter handles in [`Mlp::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }

    /// Same layout and activations with the parameter handles replaced
    /// (`with` in [`MlpVars::vars`] order).
    pub fn with_vars(&self, with: &[Var]) -> MlpVars {
        assert_eq!(
            with.len(),
            2 * self.layers.len(),
            "one weight and one bias per layer"
        );
        MlpVars {
            layers: self
                .layers
                .iter()
                .zip(with.chunks(2))
                .map(|(&(_, _, act), wb)| (wb[0], wb[1], act))
                .collect(),
        }
    }

    /// Applies the network to every row of `x: [n, in]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = linear(tape, h, w, b)?;
            h = activate(tape, h, act);
        }
        Ok(h)
    }
}

/// Convenience wrapper binding `params` and running it on `x`.
pub fn mlp_forward(params: &Mlp, x: Var, tape: &mut Tape) -> Result<Var> {
    params.validate()?;
    params.bind(tape).forward(tape, x)
}
