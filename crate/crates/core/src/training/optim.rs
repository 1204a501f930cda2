use crate::error::{dim_err, usage_err, Result};
use crate::tensor::{Real, Tensor};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled decay:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(usage_err!(
            "{} parameters, {} gradients and {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(dim_err!("gradient {:?} does not match parameter {:?}", g.shape(), p.shape()));
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (theta, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi.f64();
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps) + hp.weight_decay * theta.f64();
            *theta = T::of(theta.f64() - lr * update);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `lr_max`, then half-cosine decay to 0 at `total_steps`.
pub fn cosine_lr(step: usize, warmup_steps: usize, total_steps: usize, lr_max: f64) -> Result<f64> {
    if step > total_steps {
        return Err(usage_err!("step {step} is past the schedule's {total_steps} steps"));
    }
    if warmup_steps >= total_steps && total_steps > 0 {
        return Err(usage_err!("warmup of {warmup_steps} steps leaves no decay in {total_steps}"));
    }
    if step < warmup_steps {
        return Ok(lr_max * step as f64 / warmup_steps as f64);
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
