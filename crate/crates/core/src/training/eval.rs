use crate::conditioning::{Conditioning, ConditioningContext};
use crate::datagen::Dataset;
use crate::error::{config_err, dim_err, Result};
use crate::models::Model;
use crate::tensor::{Real, Tensor};

use super::loss::smse;
use super::sampler::{push_window, window_count};

/// Autoregressive steps of a rollout.
pub const ROLLOUT_STEPS: usize = 5;

/// Windows evaluated per forward pass.
const EVAL_BATCH: usize = 16;

/// Anything that maps a stacked history window to the next frame.
pub trait Predictor {
    type Scalar: Real;

    /// Frames per input window.
    fn history(&self) -> usize;

    /// Whether `predict` expects a conditioning context.
    fn conditioned(&self) -> bool;

    /// `[b, history·fields, ny, nx] → [b, fields, ny, nx]`.
    fn predict(&self, x: &Tensor<Self::Scalar>, ctx: Option<&ConditioningContext>) -> Result<Tensor<Self::Scalar>>;
}

impl<T: Real> Predictor for Model<T> {
    type Scalar = T;

    fn history(&self) -> usize {
        self.spec().history
    }

    fn conditioned(&self) -> bool {
        self.spec().conditioning != Conditioning::None
    }

    fn predict(&self, x: &Tensor<T>, ctx: Option<&ConditioningContext>) -> Result<Tensor<T>> {
        Model::predict(self, x, ctx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// SMSE of a single prediction, `n_t = 1`.
    OneStep,
    /// SMSE summed over [`ROLLOUT_STEPS`] autoregressive predictions.
    Rollout,
}

impl EvalMode {
    fn steps(self) -> usize {
        match self {
            EvalMode::OneStep => 1,
            EvalMode::Rollout => ROLLOUT_STEPS,
        }
    }
}

/// Mean SMSE over every valid window of every trajectory at one stride.
///
/// A rollout feeds each prediction back by dropping the oldest frame of the
/// window and appending the prediction.
pub fn evaluate<P: Predictor>(model: &P, ds: &Dataset, mode: EvalMode, stride: usize) -> Result<f64> {
    let shape = ds.shape();
    let (h, n) = (model.history(), mode.steps());
    if stride == 0 {
        return Err(config_err!("evaluation stride must be positive"));
    }
    let per_traj = window_count(shape.n_steps, h + n - 1, stride);
    if per_traj == 0 {
        return Err(config_err!(
            "{mode:?} evaluation with history {h} and stride {stride} needs more than {} steps, the dataset has {}",
            (h + n - 1) * stride,
            shape.n_steps
        ));
    }
    let first = (h - 1) * stride;
    let windows: Vec<(usize, usize)> =
        (0..shape.n_traj).flat_map(|traj| (first..first + per_traj).map(move |t| (traj, t))).collect();

    let frame = shape.frame_len();
    let mut total = 0.0;
    for chunk in windows.chunks(EVAL_BATCH) {
        let b = chunk.len();
        let mut window = Vec::with_capacity(b * h * frame);
        for &(traj, t) in chunk {
            push_window(ds, traj, t, stride, h, &mut window);
        }
        let mut window = Tensor::new(&[b, h * shape.n_fields, shape.ny, shape.nx], window)?;
        let ctx = model.conditioned().then(|| {
            let dt = vec![stride as f64 * ds.dt_save(); b];
            ConditioningContext { dt, force: chunk.iter().map(|&(traj, _)| ds.forcing(traj)).collect() }
        });
        for k in 1..=n {
            let pred = model.predict(&window, ctx.as_ref())?;
            let expect = [b, shape.n_fields, shape.ny, shape.nx];
            if pred.shape() != expect {
                return Err(dim_err!("predictor returned {:?}, expected {expect:?}", pred.shape()));
            }
            let mut target = Vec::with_capacity(b * frame);
            for &(traj, t) in chunk {
                target.extend(ds.frame(traj, t + k * stride).iter().map(|&v| <P::Scalar>::of(v as f64)));
            }
            let target = Tensor::new(&expect, target)?;
            total += smse(&pred, &target, 1)? * b as f64;
            if k < n {
                window = shift_append(&window, &pred, h, frame)?;
            }
        }
    }
    Ok(total / windows.len() as f64)
}

/// Drops the oldest frame of each window and appends `next`.
fn shift_append<T: Real>(window: &Tensor<T>, next: &Tensor<T>, h: usize, frame: usize) -> Result<Tensor<T>> {
    let b = next.shape()[0];
    let mut out = Vec::with_capacity(window.numel());
    for i in 0..b {
        out.extend_from_slice(&window.data()[(i * h + 1) * frame..(i + 1) * h * frame]);
        out.extend_from_slice(&next.data()[i * frame..(i + 1) * frame]);
    }
    Tensor::new(window.shape(), out)
}
