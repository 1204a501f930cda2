use super::{Real, Var};
use crate::error::{dim_err, Result};

/// Projection parameters of single-head spatial self-attention. Weights are
/// `[c, c]` matrices applied as `tokens @ w + b`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'g, T: Real> {
    pub wq: Var<'g, T>,
    pub bq: Var<'g, T>,
    pub wk: Var<'g, T>,
    pub bk: Var<'g, T>,
    pub wv: Var<'g, T>,
    pub bv: Var<'g, T>,
    pub wo: Var<'g, T>,
    pub bo: Var<'g, T>,
}

/// Scaled dot-product self-attention over the flattened spatial grid.
///
/// `x: [b, c, h, w]` becomes a sequence of `h·w` tokens of width `c`; the
/// result is projected back and reshaped to `[b, c, h, w]`. Normalization
/// before and the residual connection after are left to the caller.
pub fn spatial_attention<'g, T: Real>(x: Var<'g, T>, p: &AttentionWeights<'g, T>) -> Result<Var<'g, T>> {
    let xv = x.value();
    let (b, c, h, w) = xv.dims4()?;
    if p.wq.value().shape() != [c, c] {
        return Err(dim_err!("attention weights {:?} do not match {c} channels", p.wq.value().shape()));
    }
    let n = h * w;
    let flat = x.reshape(&[b, c, n])?.transpose_last()?.reshape(&[b * n, c])?;
    let project = |wt: Var<'g, T>, bias: Var<'g, T>| flat.linear(wt, Some(bias))?.reshape(&[b, n, c]);
    let q = project(p.wq, p.bq)?;
    let k = project(p.wk, p.bk)?;
    let v = project(p.wv, p.bv)?;
    let attn = q.bmm(k, true)?.scale(1.0 / (c as f64).sqrt()).softmax_last()?;
    let mixed = attn.bmm(v, false)?.reshape(&[b * n, c])?;
    mixed
        .linear(p.wo, Some(p.bo))?
        .reshape(&[b, n, c])?
        .transpose_last()?
        .reshape(&[b, c, h, w])
}
