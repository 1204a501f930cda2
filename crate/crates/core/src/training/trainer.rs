use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::Conditioning;
use crate::datagen::Dataset;
use crate::error::{config_err, dim_err, Error, Result};
use crate::models::Model;
use crate::tensor::{Graph, Tensor};

use super::eval::{evaluate, EvalMode};
use super::loss::smse_loss;
use super::optim::{adamw_step, cosine_lr, AdamHyper, AdamState};
use super::sampler::{sample_batch, window_count, Batch, WindowSampler};

fn default_weight_decay() -> f64 {
    1e-5
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_strides() -> Vec<usize> {
    vec![1]
}
fn default_val_fraction() -> f64 {
    0.1
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate; the model family's default when absent.
    #[serde(default)]
    pub lr_max: Option<f64>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Linear warmup length; 5% of all updates when absent.
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Save-interval multiples the sampler draws Δt from.
    #[serde(default = "default_strides")]
    pub strides: Vec<usize>,
    /// Updates per epoch; by default enough batches to cover every training
    /// window once in expectation.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Share of trajectories, taken from the end, held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: None,
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch: default_batch(),
            warmup_steps: None,
            seed: 0,
            strides: default_strides(),
            steps_per_epoch: None,
            val_fraction: default_val_fraction(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("train.epochs must be positive"));
        }
        if self.batch == 0 {
            return Err(config_err!("train.batch must be at least 1"));
        }
        if let Some(lr) = self.lr_max {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(config_err!("train.lr_max must be finite and non-negative, got {lr}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err!("train.weight_decay must be finite and non-negative"));
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(config_err!("train.strides must be a non-empty list of positive steps"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(config_err!("train.steps_per_epoch must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(config_err!("train.val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Updates applied so far.
    pub step: usize,
    /// `cosine_lr(step)`.
    pub lr: f64,
    /// Mean loss of the epoch's batches.
    pub train_smse: f64,
    pub val_onestep: f64,
    pub val_rollout: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,lr,train_smse,val_onestep,val_rollout";

/// CSV text; floats use the shortest form that parses back to the same value.
pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e}",
            r.epoch, r.step, r.lr, r.train_smse, r.val_onestep, r.val_rollout
        );
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows))?;
    Ok(())
}

/// Outcome of a single update.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Gradient of every parameter tensor, in registry order.
    pub grads: Vec<Tensor<f32>>,
}

/// Stateful training loop over one model and one dataset.
#[derive(Debug)]
pub struct Trainer {
    model: Model<f32>,
    train: Dataset,
    val: Dataset,
    sampler: WindowSampler,
    batch: usize,
    eval_stride: usize,
    rng: ChaCha8Rng,
    state: AdamState,
    hyper: AdamHyper,
    lr_max: f64,
    warmup: usize,
    steps_per_epoch: usize,
    total: usize,
    step: usize,
    resolved: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = model.spec();
        let shape = ds.shape();
        if spec.in_fields != shape.n_fields || spec.out_fields != shape.n_fields {
            return Err(dim_err!(
                "model maps {} fields to {}, the dataset has {}",
                spec.in_fields,
                spec.out_fields,
                shape.n_fields
            ));
        }
        let (train, val) = ds.split(cfg.val_fraction)?;
        let sampler = WindowSampler::new(&train, spec.history, &cfg.strides)?;
        let eval_stride = cfg.strides.iter().copied().min().unwrap_or(1);
        let windows: usize =
            cfg.strides.iter().map(|&s| train.shape().n_traj * window_count(shape.n_steps, spec.history, s)).sum();
        let steps_per_epoch = cfg.steps_per_epoch.unwrap_or_else(|| windows.div_ceil(cfg.batch));
        let total = steps_per_epoch * cfg.epochs;
        let warmup = cfg.warmup_steps.unwrap_or((total as f64 * 0.05).round() as usize);
        if warmup >= total {
            return Err(config_err!("train.warmup_steps ({warmup}) must be below the {total} total updates"));
        }
        let lr_max = cfg.lr_max.unwrap_or_else(|| spec.family.default_lr());
        let resolved = TrainConfig {
            lr_max: Some(lr_max),
            warmup_steps: Some(warmup),
            steps_per_epoch: Some(steps_per_epoch),
            ..cfg.clone()
        };
        Ok(Trainer {
            state: AdamState::new(model.params()),
            hyper: AdamHyper { weight_decay: cfg.weight_decay, ..AdamHyper::default() },
            lr_max,
            model,
            train,
            val,
            sampler,
            batch: cfg.batch,
            eval_stride,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            warmup,
            steps_per_epoch,
            total,
            step: 0,
            resolved,
        })
    }

    /// The configuration with every defaulted field filled in.
    pub fn resolved_config(&self) -> &TrainConfig {
        &self.resolved
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn val_set(&self) -> &Dataset {
        &self.val
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    /// Updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Stride the validation metrics use: the shortest trained one.
    pub fn eval_stride(&self) -> usize {
        self.eval_stride
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        cosine_lr(step, self.warmup, self.total, self.lr_max)
    }

    /// Forward, backward and one AdamW update on a fresh batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let batch: Batch<f32> = sample_batch(&self.train, &self.sampler, self.batch, &mut self.rng)?;
        let lr = self.lr_at(self.step)?;
        let (loss, grads) = loss_and_grads(&self.model, &batch)?;
        let grad_norm = grads.iter().flat_map(|g| g.data()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite { step: self.step, lr, grad_norm });
        }
        adamw_step(self.model.params_mut(), &grads, &mut self.state, lr, &self.hyper)?;
        self.step += 1;
        Ok(StepReport { loss, lr, grad_norm, grads })
    }

    /// One epoch of updates followed by validation.
    pub fn epoch(&mut self, epoch: usize) -> Result<MetricsRecord> {
        let mut sum = 0.0;
        for _ in 0..self.steps_per_epoch {
            sum += self.step()?.loss;
        }
        Ok(MetricsRecord {
            epoch,
            step: self.step,
            lr: self.lr_at(self.step)?,
            train_smse: sum / self.steps_per_epoch as f64,
            val_onestep: evaluate(&self.model, &self.val, EvalMode::OneStep, self.eval_stride)?,
            val_rollout: evaluate(&self.model, &self.val, EvalMode::Rollout, self.eval_stride)?,
        })
    }
}

/// One-step SMSE of `model` on `batch` and its gradient per parameter tensor.
pub fn loss_and_grads(model: &Model<f32>, batch: &Batch<f32>) -> Result<(f64, Vec<Tensor<f32>>)> {
    let graph = Graph::new();
    let params = model.attach(&graph, true);
    let ctx = (model.spec().conditioning != Conditioning::None).then_some(&batch.ctx);
    let pred = model.forward(&graph, &params, graph.constant(batch.inputs.clone()), ctx)?;
    let loss = smse_loss(pred, graph.constant(batch.targets.clone()), 1)?;
    let value = loss.value().data()[0] as f64;
    graph.backward(loss)?;
    let grads = params
        .vars()
        .iter()
        .zip(model.params())
        .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}

/// Runs every epoch and returns the trained model with one metrics row per epoch.
pub fn train(model: Model<f32>, ds: &Dataset, cfg: &TrainConfig) -> Result<(Model<f32>, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::new(model, ds, cfg)?;
    let rows = (1..=cfg.epochs).map(|e| trainer.epoch(e)).collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_model(), rows))
}
