//! Minimal differentiable network kit.

pub mod conv;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tape;

pub use conv::Conv3d;
pub use layers::{mlp_forward, Dense, Mlp, MlpVars};
pub use model::{DecodedGaussians, DecoderSet, Model, ModelConfig, ModelVars, SceneForward};
pub use ops::Activation;
pub use tape::{Gradients, Op, Tape, Tensor, Var};
