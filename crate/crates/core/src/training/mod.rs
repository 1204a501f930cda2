//! Loss, optimizer, learning-rate schedule, Δt-aware window sampling, the
//! training loop and the one-step/rollout metrics.

mod eval;
mod loss;
mod optim;
mod sampler;
mod trainer;

pub use eval::{evaluate, EvalMode, Predictor, ROLLOUT_STEPS};
pub use loss::{smse, smse_loss};
pub use optim::{adamw_step, cosine_lr, AdamHyper, AdamState};
pub use sampler::{sample_batch, window_count, Batch, WindowSampler};
pub use trainer::{
    loss_and_grads, metrics_csv, train, write_metrics_csv, MetricsRecord, StepReport, TrainConfig, Trainer,
    METRICS_HEADER,
};
