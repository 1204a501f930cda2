//! Scalar-parameter conditioning: sinusoidal embeddings of the time window
//! and the forcing amplitude, their projection MLPs, and the two ways the
//! projection enters a block (Addition and AdaGN).

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, usage_err, Result};
use crate::models::{Init, Layout, Params};
use crate::tensor::{Graph, Real, Tensor, Var};

/// How a projected embedding is injected into each block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    #[default]
    None,
    /// Broadcast-add to the first convolution's output.
    Addition,
    /// Scale and shift of the second group normalization.
    Adagn,
}

/// Sinusoidal embedding of a scalar.
///
/// For `i < d/2`, `out[2i] = sin(x / 10000^(2i/d))` and
/// `out[2i+1] = cos(x / 10000^(2i/d))`.
pub fn sinusoidal_embed(x: f64, d: usize) -> Result<Vec<f64>> {
    if d < 2 || d % 2 != 0 {
        return Err(config_err!("embedding dimension must be even and at least 2, got {d}"));
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / d as f64);
        out.push((x * freq).sin());
        out.push((x * freq).cos());
    }
    Ok(out)
}

/// Per-sample conditioning inputs of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningContext {
    /// Time window Δt of each sample.
    pub dt: Vec<f64>,
    /// Forcing amplitude f of each sample.
    pub force: Vec<f64>,
}

impl ConditioningContext {
    pub fn new(dt: Vec<f64>, force: Vec<f64>) -> Result<Self> {
        if dt.len() != force.len() || dt.is_empty() {
            return Err(dim_err!("conditioning needs one (Δt, f) pair per sample, got {} and {}", dt.len(), force.len()));
        }
        Ok(ConditioningContext { dt, force })
    }

    /// The same `(Δt, f)` for every sample of a batch.
    pub fn repeat(dt: f64, force: f64, batch: usize) -> Self {
        ConditioningContext { dt: vec![dt; batch], force: vec![force; batch] }
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    /// Embeddings `[batch, d]` of Δt and f.
    pub fn embed<T: Real>(&self, d: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let rows = |xs: &[f64]| -> Result<Tensor<T>> {
            let mut flat = Vec::with_capacity(xs.len() * d);
            for &x in xs {
                flat.extend(sinusoidal_embed(x, d)?);
            }
            Tensor::from_f64(&[xs.len(), d], &flat)
        };
        Ok((rows(&self.dt)?, rows(&self.force)?))
    }
}

/// Declares the two projection MLPs: `Linear(d, width) → GeLU → Linear(width, width)`.
pub(crate) fn projection_layout(layout: &mut Layout, embed_dim: usize, width: usize) {
    for name in ["cond.dt", "cond.force"] {
        layout.linear(&format!("{name}.l1"), embed_dim, width);
        layout.linear(&format!("{name}.l2"), width, width);
    }
}

/// Declares one block's head mapping the projection to `c` (Addition) or
/// `2c` (AdaGN) values. AdaGN heads start with a unit scale bias so that a
/// fresh block normalizes exactly like its unconditioned counterpart.
pub(crate) fn head_layout(layout: &mut Layout, block: &str, width: usize, c: usize, mode: Conditioning) {
    match mode {
        Conditioning::None => {}
        Conditioning::Addition => layout.linear(&format!("{block}.cond"), width, c),
        Conditioning::Adagn => {
            layout.push(format!("{block}.cond.w"), vec![width, 2 * c], Init::KaimingUniform { fan_in: width });
            layout.push(format!("{block}.cond.b"), vec![2 * c], Init::ScaleShift);
        }
    }
}

/// Embeds the context and runs both projection MLPs; the sum `[batch, width]`
/// is shared by every block head.
pub fn project<'g, T: Real>(
    graph: &'g Graph<T>,
    params: &Params<'g, T>,
    ctx: &ConditioningContext,
    embed_dim: usize,
) -> Result<Var<'g, T>> {
    let (edt, ef) = ctx.embed::<T>(embed_dim)?;
    let mlp = |name: &str, e: Tensor<T>| -> Result<Var<'g, T>> {
        let h = graph
            .constant(e)
            .linear(params.get(&format!("{name}.l1.w")), Some(params.get(&format!("{name}.l1.b"))))?
            .gelu();
        h.linear(params.get(&format!("{name}.l2.w")), Some(params.get(&format!("{name}.l2.b"))))
    };
    mlp("cond.dt", edt)?.add(mlp("cond.force", ef)?)
}

/// One block's head applied to the shared projection.
pub fn head<'g, T: Real>(params: &Params<'g, T>, block: &str, projection: Var<'g, T>) -> Result<Var<'g, T>> {
    projection.linear(params.get(&format!("{block}.cond.w")), Some(params.get(&format!("{block}.cond.b"))))
}

/// Adds `cond: [b, c]` to every spatial position of `h: [b, c, h, w]`.
pub fn apply_addition<'g, T: Real>(h: Var<'g, T>, cond: Var<'g, T>) -> Result<Var<'g, T>> {
    h.channel_add(cond)
}

/// Group-normalization parameters of one layer.
#[derive(Clone, Copy, Debug)]
pub struct GroupNorm<'g, T: Real> {
    pub groups: usize,
    pub gamma: Var<'g, T>,
    pub beta: Var<'g, T>,
    pub eps: f64,
}

impl<'g, T: Real> GroupNorm<'g, T> {
    pub fn apply(&self, h: Var<'g, T>) -> Result<Var<'g, T>> {
        h.group_norm(self.groups, self.gamma, self.beta, self.eps)
    }
}

/// `y_s ⊙ GroupNorm(h) + y_b` with per-sample `y_s, y_b: [b, c]`.
pub fn apply_adagn<'g, T: Real>(
    h: Var<'g, T>,
    norm: &GroupNorm<'g, T>,
    y_s: Var<'g, T>,
    y_b: Var<'g, T>,
) -> Result<Var<'g, T>> {
    norm.apply(h)?.channel_mul(y_s)?.channel_add(y_b)
}

/// Splits an AdaGN head output `[b, 2c]` into `(y_s, y_b)`.
pub fn split_scale_shift<'g, T: Real>(y: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let shape = y.shape();
    let &[b, two_c] = &shape[..] else {
        return Err(dim_err!("AdaGN projection must be [batch, 2c], got {shape:?}"));
    };
    if two_c % 2 != 0 {
        return Err(dim_err!("AdaGN projection width {two_c} is odd"));
    }
    let c = two_c / 2;
    Ok((y.narrow_channels(0, c)?.reshape(&[b, c])?, y.narrow_channels(c, c)?.reshape(&[b, c])?))
}

/// Conditioning state threaded through a forward pass.
#[derive(Clone, Copy)]
pub(crate) struct Injector<'a, 'g, T: Real> {
    pub mode: Conditioning,
    pub params: &'a Params<'g, T>,
    pub projection: Option<Var<'g, T>>,
}

impl<'a, 'g, T: Real> Injector<'a, 'g, T> {
    pub fn new(
        graph: &'g Graph<T>,
        params: &'a Params<'g, T>,
        mode: Conditioning,
        embed_dim: usize,
        ctx: Option<&ConditioningContext>,
        batch: usize,
    ) -> Result<Self> {
        let projection = match (mode, ctx) {
            (Conditioning::None, None) => None,
            (Conditioning::None, Some(_)) => {
                return Err(usage_err!("a conditioning context was given to an unconditioned model"))
            }
            (_, None) => return Err(usage_err!("a conditioned model needs a conditioning context")),
            (_, Some(ctx)) => {
                if ctx.len() != batch {
                    return Err(dim_err!("conditioning context has {} samples, batch has {batch}", ctx.len()));
                }
                Some(project(graph, params, ctx, embed_dim)?)
            }
        };
        Ok(Injector { mode, params, projection })
    }

    /// Addition point: right after a block's first convolution.
    pub fn add(&self, block: &str, h: Var<'g, T>) -> Result<Var<'g, T>> {
        match (self.mode, self.projection) {
            (Conditioning::Addition, Some(p)) => apply_addition(h, head(self.params, block, p)?),
            _ => Ok(h),
        }
    }

    /// The block's second normalization, scaled and shifted under AdaGN.
    pub fn norm(&self, block: &str, norm: &GroupNorm<'g, T>, h: Var<'g, T>) -> Result<Var<'g, T>> {
        match (self.mode, self.projection) {
            (Conditioning::Adagn, Some(p)) => {
                let (y_s, y_b) = split_scale_shift(head(self.params, block, p)?)?;
                apply_adagn(h, norm, y_s, y_b)
            }
            _ => norm.apply(h),
        }
    }
}
