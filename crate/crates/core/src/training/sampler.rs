use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::conditioning::ConditioningContext;
use crate::datagen::Dataset;
use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor};

/// One training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Real> {
    /// `[batch, history·fields, ny, nx]`, oldest frame first.
    pub inputs: Tensor<T>,
    /// `[batch, fields, ny, nx]`.
    pub targets: Tensor<T>,
    pub ctx: ConditioningContext,
    /// Stride of every sample, for bookkeeping.
    pub strides: Vec<usize>,
}

/// Draws `(trajectory, time, stride)` windows.
///
/// A window ending at time `t` with stride `s` reads frames
/// `t − (h−1)s, …, t` and predicts `t + s`, so the input spacing equals the
/// conditioned Δt = `s · dt_save`. Shorter strides admit more windows; each
/// window is weighted by the inverse of its stride's window count, which
/// leaves every stride class equally likely.
#[derive(Clone, Debug)]
pub struct WindowSampler {
    history: usize,
    strides: Vec<usize>,
    n_traj: usize,
    n_steps: usize,
    class: WeightedIndex<f64>,
}

/// Valid window end times per trajectory for one stride.
pub fn window_count(n_steps: usize, history: usize, stride: usize) -> usize {
    n_steps.saturating_sub(history * stride)
}

impl WindowSampler {
    pub fn new(ds: &Dataset, history: usize, strides: &[usize]) -> Result<Self> {
        if history == 0 {
            return Err(config_err!("history must be positive"));
        }
        if strides.is_empty() || strides.contains(&0) {
            return Err(config_err!("strides must be a non-empty list of positive steps, got {strides:?}"));
        }
        let shape = ds.shape();
        let mut weights = Vec::with_capacity(strides.len());
        for &s in strides {
            let count = shape.n_traj * window_count(shape.n_steps, history, s);
            if count == 0 {
                return Err(config_err!(
                    "stride {s} with history {history} needs more than {} steps per trajectory, the dataset has {}",
                    history * s,
                    shape.n_steps
                ));
            }
            // count windows of weight 1/count each.
            weights.push(count as f64 * (1.0 / count as f64));
        }
        let class = WeightedIndex::new(&weights).map_err(|e| config_err!("stride weights: {e}"))?;
        Ok(WindowSampler { history, strides: strides.to_vec(), n_traj: shape.n_traj, n_steps: shape.n_steps, class })
    }

    /// `(trajectory, end time, stride)`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize, usize) {
        let s = self.strides[self.class.sample(rng)];
        let traj = rng.random_range(0..self.n_traj);
        let first = (self.history - 1) * s;
        let t = first + rng.random_range(0..window_count(self.n_steps, self.history, s));
        (traj, t, s)
    }
}

/// Stacks the history frames of a window onto `out`.
pub(crate) fn push_window<T: Real>(ds: &Dataset, traj: usize, t: usize, stride: usize, history: usize, out: &mut Vec<T>) {
    for k in (0..history).rev() {
        out.extend(ds.frame(traj, t - k * stride).iter().map(|&v| T::of(v as f64)));
    }
}

/// Assembles `batch` windows drawn from `sampler`.
pub fn sample_batch<T: Real, R: Rng>(ds: &Dataset, sampler: &WindowSampler, batch: usize, rng: &mut R) -> Result<Batch<T>> {
    if batch == 0 {
        return Err(config_err!("batch must be at least 1"));
    }
    let shape = ds.shape();
    let frame = shape.frame_len();
    let mut inputs = Vec::with_capacity(batch * sampler.history * frame);
    let mut targets = Vec::with_capacity(batch * frame);
    let (mut dt, mut force, mut strides) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..batch {
        let (traj, t, s) = sampler.draw(rng);
        push_window(ds, traj, t, s, sampler.history, &mut inputs);
        targets.extend(ds.frame(traj, t + s).iter().map(|&v| T::of(v as f64)));
        dt.push(s as f64 * ds.dt_save());
        force.push(ds.forcing(traj));
        strides.push(s);
    }
    Ok(Batch {
        inputs: Tensor::new(&[batch, sampler.history * shape.n_fields, shape.ny, shape.nx], inputs)?,
        targets: Tensor::new(&[batch, shape.n_fields, shape.ny, shape.nx], targets)?,
        ctx: ConditioningContext::new(dt, force)?,
        strides,
    })
}
