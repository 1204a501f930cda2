use super::ops::rule;
use super::{Real, Tensor, Var};
use crate::error::{config_err, dim_err, Result};

impl<'g, T: Real> Var<'g, T> {
    /// Group normalization of `[b, c, h, w]` followed by a per-channel affine map.
    ///
    /// Statistics are taken per sample over each group's channels and all
    /// spatial positions, with the biased variance.
    pub fn group_norm(self, groups: usize, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let (b, ch, h, w) = x.dims4()?;
        if groups == 0 || ch % groups != 0 {
            return Err(config_err!("group_norm: {ch} channels not divisible into {groups} groups"));
        }
        if gm.shape() != [ch] || bt.shape() != [ch] {
            return Err(dim_err!("group_norm: affine parameters {:?}/{:?} do not match {ch} channels", gm.shape(), bt.shape()));
        }
        let hw = h * w;
        let cpg = ch / groups;
        let m = cpg * hw;
        let eps = T::of(eps);
        let inv_m = T::one() / T::of(m as f64);

        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); b * groups];
        for (gi, (xs, xh)) in x.data().chunks(m).zip(xhat.chunks_mut(m)).enumerate() {
            let mean = xs.iter().copied().sum::<T>() * inv_m;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
            let r = T::one() / (var + eps).sqrt();
            rstd[gi] = r;
            for (o, &v) in xh.iter_mut().zip(xs) {
                *o = (v - mean) * r;
            }
        }
        let mut out = xhat.clone();
        for (ci, plane) in out.chunks_mut(hw).enumerate() {
            let c = ci % ch;
            let (g, bb) = (gm.data()[c], bt.data()[c]);
            plane.iter_mut().for_each(|v| *v = *v * g + bb);
        }
        let out = Tensor::new(x.shape(), out)?;

        Ok(self.graph().record(
            &[self, gamma, beta],
            out,
            rule("group_norm", move |c| {
                let gm = &c.inputs[1];
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for (ci, (g, xh)) in c.grad_out.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let cc = ci % ch;
                    dgamma[cc] += g.iter().zip(xh).map(|(&g, &x)| g * x).sum::<T>();
                    dbeta[cc] += g.iter().copied().sum::<T>();
                }
                let dx = c.needs[0].then(|| {
                    let mut dx = vec![T::zero(); xhat.len()];
                    for gi in 0..b * groups {
                        let range = gi * m..(gi + 1) * m;
                        let first_channel = (gi % groups) * cpg;
                        let mut dxhat = c.grad_out[range.clone()].to_vec();
                        for (k, chunk) in dxhat.chunks_mut(hw).enumerate() {
                            let g = gm.data()[first_channel + k];
                            chunk.iter_mut().for_each(|v| *v *= g);
                        }
                        let xh = &xhat[range.clone()];
                        let mean_d = dxhat.iter().copied().sum::<T>() * inv_m;
                        let mean_dx = dxhat.iter().zip(xh).map(|(&d, &x)| d * x).sum::<T>() * inv_m;
                        let r = rstd[gi];
                        for ((o, &d), &x) in dx[range].iter_mut().zip(&dxhat).zip(xh) {
                            *o = r * (d - mean_d - x * mean_dx);
                        }
                    }
                    dx
                });
                vec![dx, c.needs[1].then_some(dgamma), c.needs[2].then_some(dbeta)]
            }),
        ))
    }
}
