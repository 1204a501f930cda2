use super::{Graph, Real, Tensor, Var};
use crate::error::{usage_err, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: usize,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because the one-sided slopes disagree (a kink, e.g.
    /// a max-pool tie), where no derivative exists.
    pub excluded: Vec<usize>,
}

const ABS_FLOOR: f64 = 1e-8;

/// Compares the autodiff gradient of the scalar `f` at `x` with central
/// differences of width `2·step` over every coordinate.
pub fn check_gradient<T, F>(x: &Tensor<T>, step: f64, f: F) -> Result<GradCheck>
where
    T: Real,
    F: for<'g> Fn(&'g Graph<T>, Var<'g, T>) -> Result<Var<'g, T>>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    check_gradient_at(x, step, &coords, f)
}

/// Like [`check_gradient`] but only over the listed flat coordinates.
pub fn check_gradient_at<T, F>(x: &Tensor<T>, step: f64, coords: &[usize], f: F) -> Result<GradCheck>
where
    T: Real,
    F: for<'g> Fn(&'g Graph<T>, Var<'g, T>) -> Result<Var<'g, T>>,
{
    let analytic = {
        let g = Graph::new();
        let xv = g.param(x.clone());
        let loss = f(&g, xv)?;
        g.backward(loss)?;
        xv.grad().map(Tensor::into_data).unwrap_or_else(|| vec![T::zero(); x.numel()])
    };
    let eval = |probe: Tensor<T>| -> Result<f64> {
        let g = Graph::new();
        let xv = g.constant(probe);
        let loss = f(&g, xv)?.value();
        if loss.numel() != 1 {
            return Err(usage_err!("gradient check needs a scalar function"));
        }
        Ok(loss.data()[0].f64())
    };

    let center = eval(x.clone())?;
    let mut report = GradCheck { max_rel_err: 0.0, worst_index: 0, checked: 0, excluded: Vec::new() };
    let at = |i: usize, offset: f64| -> Result<f64> {
        let mut probe = x.clone();
        let x0 = probe.data()[i];
        probe.data_mut()[i] = x0 + T::of(offset);
        eval(probe)
    };
    for &i in coords {
        let plus = at(i, step)?;
        let minus = at(i, -step)?;

        let forward = (plus - center) / step;
        let backward = (center - minus) / step;
        let kink = (forward - backward).abs();
        if kink > 1e-4 && kink > 0.1 * forward.abs().max(backward.abs()) {
            report.excluded.push(i);
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i].f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
