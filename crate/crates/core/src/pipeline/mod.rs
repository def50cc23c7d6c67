//! Self-supervised training: mask, normalize, encode, decode, render sampled
//! views, score them and update the network with AdamW.

mod optim;
mod probe;
mod scene;
mod train;

pub use optim::{adamw_step, learning_rate, AdamConfig, OptimizerState};
pub use probe::similarity_probe;
pub use scene::{mock_feature_targets, sample_views, SceneSample, View};
pub use train::{
    evaluate_view, fit, mix_seed, render_camera, render_view, train_step, view_metrics,
    CheckpointSink, NoCheckpoints, StepOutput, StepRecord, TrainConfig, TrainState, ViewMetrics,
    ViewRender,
};

#[cfg(test)]
mod tests;
