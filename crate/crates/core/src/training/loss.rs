use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor, Var};

fn check(pred: &[usize], target: &[usize], n_t: usize) -> Result<(usize, usize)> {
    if pred != target {
        return Err(dim_err!("prediction {pred:?} and target {target:?} differ"));
    }
    if pred.len() < 3 {
        return Err(dim_err!("SMSE needs [batch, channels, spatial...], got {pred:?}"));
    }
    if n_t == 0 || pred[1] % n_t != 0 {
        return Err(dim_err!("{} channels do not split into {n_t} time steps", pred[1]));
    }
    Ok((pred[0], pred[2..].iter().product()))
}

/// Summed MSE: squared error averaged over grid points, summed over fields
/// and the `n_t` stacked time steps, averaged over the batch.
///
/// Channels hold `n_t` blocks of fields, so the sum over channels covers both.
pub fn smse_loss<'g, T: Real>(pred: Var<'g, T>, target: Var<'g, T>, n_t: usize) -> Result<Var<'g, T>> {
    let (b, spatial) = check(&pred.shape(), &target.shape(), n_t)?;
    let d = pred.sub(target)?;
    Ok(d.mul(d)?.sum().scale(1.0 / (b * spatial) as f64))
}

/// [`smse_loss`] on plain tensors, accumulated in `f64`.
pub fn smse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, n_t: usize) -> Result<f64> {
    let (b, spatial) = check(pred.shape(), target.shape(), n_t)?;
    let total: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p.f64() - t.f64()).powi(2)).sum();
    Ok(total / (b * spatial) as f64)
}
