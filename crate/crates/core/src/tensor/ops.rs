//! Elementwise, linear-algebra and shape operations on [`Var`].

use super::graph::{Backward, BackwardCtx};
use super::{gelu, gemm, normal_cdf, normal_pdf, Graph, Mat, Real, Tensor, Var};
use crate::error::{dim_err, Result};

/// Backward rule built from a closure.
pub(crate) struct FnRule<F> {
    name: &'static str,
    f: F,
}

impl<T, F> Backward<T> for FnRule<F>
where
    T: Real,
    F: Fn(BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>,
{
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        (self.f)(ctx)
    }
}

pub(crate) fn rule<T, F>(name: &'static str, f: F) -> Box<dyn Backward<T>>
where
    T: Real,
    F: Fn(BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
{
    Box::new(FnRule { name, f })
}

fn same_shape<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<'g, T: Real> Var<'g, T> {
    fn g(&self) -> &'g Graph<T> {
        self.graph()
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x + y);
        Ok(self.g().record(&[self, other], out, rule("add", |c| vec![Some(c.grad_out.to_vec()), Some(c.grad_out.to_vec())])))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x - y);
        Ok(self.g().record(
            &[self, other],
            out,
            rule("sub", |c: BackwardCtx<'_, T>| vec![Some(c.grad_out.to_vec()), Some(c.grad_out.iter().map(|&g| -g).collect())]),
        ))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.g().record(
            &[self, other],
            out,
            rule("mul", |c| {
                let (a, b) = (&c.inputs[0], &c.inputs[1]);
                let da = c.needs[0].then(|| c.grad_out.iter().zip(b.data()).map(|(&g, &y)| g * y).collect());
                let db = c.needs[1].then(|| c.grad_out.iter().zip(a.data()).map(|(&g, &x)| g * x).collect());
                vec![da, db]
            }),
        ))
    }

    pub fn scale(self, factor: f64) -> Var<'g, T> {
        let k = T::of(factor);
        let out = self.value().map(|x| x * k);
        self.g().record(&[self], out, rule("scale", move |c| vec![Some(c.grad_out.iter().map(|&g| g * k).collect())]))
    }

    pub fn add_scalar(self, value: f64) -> Var<'g, T> {
        let v = T::of(value);
        let out = self.value().map(|x| x + v);
        self.g().record(&[self], out, rule("add_scalar", |c| vec![Some(c.grad_out.to_vec())]))
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(self) -> Var<'g, T> {
        let out = self.value().map(gelu);
        self.g().record(
            &[self],
            out,
            rule("gelu", |c| {
                let x = &c.inputs[0];
                let dx = c.grad_out.iter().zip(x.data()).map(|(&g, &x)| g * (normal_cdf(x) + x * normal_pdf(x))).collect();
                vec![Some(dx)]
            }),
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'g, T> {
        let out = Tensor::scalar(self.value().sum());
        self.g().record(
            &[self],
            out,
            rule("sum", |c| {
                let n = c.inputs[0].numel();
                vec![Some(vec![c.grad_out[0]; n])]
            }),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.g().record(&[self], out, rule("reshape", |c| vec![Some(c.grad_out.to_vec())])))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(dim_err!("matmul needs 2-D operands, got {:?} and {:?}", a.shape(), b.shape()));
        };
        if k != k2 {
            return Err(dim_err!("matmul inner extents differ: {:?} · {:?}", a.shape(), b.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), a.data(), Mat::rm(m, k), b.data(), Mat::rm(k, n), T::zero(), &mut out, Mat::rm(m, n));
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.g().record(
            &[self, other],
            out,
            rule("matmul", move |c| {
                let (a, b) = (&c.inputs[0], &c.inputs[1]);
                let da = c.needs[0].then(|| {
                    let mut da = vec![T::zero(); m * k];
                    gemm(T::one(), c.grad_out, Mat::rm(m, n), b.data(), Mat::rm(k, n).t(), T::zero(), &mut da, Mat::rm(m, k));
                    da
                });
                let db = c.needs[1].then(|| {
                    let mut db = vec![T::zero(); k * n];
                    gemm(T::one(), a.data(), Mat::rm(m, k).t(), c.grad_out, Mat::rm(m, n), T::zero(), &mut db, Mat::rm(k, n));
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(self, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let y = self.matmul(w)?;
        match b {
            Some(b) => y.bias_add(b),
            None => Ok(y),
        }
    }

    /// Adds `b[c]` along axis 1 of a tensor shaped `[n, c, ...]`.
    pub fn bias_add(self, b: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, bv) = (self.value(), b.value());
        let shape = x.shape().to_vec();
        if shape.len() < 2 || bv.shape() != [shape[1]] {
            return Err(dim_err!("bias_add: bias {:?} does not match axis 1 of {:?}", bv.shape(), shape));
        }
        let (n, ch) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut out = x.data().to_vec();
        for i in 0..n {
            for c in 0..ch {
                let off = (i * ch + c) * inner;
                out[off..off + inner].iter_mut().for_each(|v| *v += bv.data()[c]);
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.g().record(
            &[self, b],
            out,
            rule("bias_add", move |c| {
                let db = c.needs[1].then(|| {
                    let mut db = vec![T::zero(); ch];
                    for i in 0..n {
                        for (cc, d) in db.iter_mut().enumerate() {
                            let off = (i * ch + cc) * inner;
                            *d += c.grad_out[off..off + inner].iter().copied().sum::<T>();
                        }
                    }
                    db
                });
                vec![Some(c.grad_out.to_vec()), db]
            }),
        ))
    }

    /// Adds a per-sample channel vector `v: [b, c]` to `x: [b, c, h, w]`.
    pub fn channel_add(self, v: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, vv) = (self.value(), v.value());
        let (b, ch, h, w) = x.dims4()?;
        if vv.shape() != [b, ch] {
            return Err(dim_err!("channel_add: vector {:?} does not match [{b}, {ch}]", vv.shape()));
        }
        let hw = h * w;
        let mut out = x.data().to_vec();
        for (plane, &add) in out.chunks_mut(hw).zip(vv.data()) {
            plane.iter_mut().for_each(|o| *o += add);
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.g().record(
            &[self, v],
            out,
            rule("channel_add", move |c| {
                let dv = c.needs[1].then(|| c.grad_out.chunks(hw).map(|p| p.iter().copied().sum()).collect());
                vec![Some(c.grad_out.to_vec()), dv]
            }),
        ))
    }

    /// Multiplies `x: [b, c, h, w]` by a per-sample channel vector `v: [b, c]`.
    pub fn channel_mul(self, v: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, vv) = (self.value(), v.value());
        let (b, ch, h, w) = x.dims4()?;
        if vv.shape() != [b, ch] {
            return Err(dim_err!("channel_mul: vector {:?} does not match [{b}, {ch}]", vv.shape()));
        }
        let hw = h * w;
        let mut out = x.data().to_vec();
        for (plane, &s) in out.chunks_mut(hw).zip(vv.data()) {
            plane.iter_mut().for_each(|o| *o *= s);
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.g().record(
            &[self, v],
            out,
            rule("channel_mul", move |c| {
                let (x, v) = (&c.inputs[0], &c.inputs[1]);
                let dx = c.needs[0].then(|| {
                    let mut dx = c.grad_out.to_vec();
                    for (plane, &s) in dx.chunks_mut(hw).zip(v.data()) {
                        plane.iter_mut().for_each(|d| *d *= s);
                    }
                    dx
                });
                let dv = c.needs[1].then(|| {
                    c.grad_out
                        .chunks(hw)
                        .zip(x.data().chunks(hw))
                        .map(|(g, xp)| g.iter().zip(xp).map(|(&g, &x)| g * x).sum())
                        .collect()
                });
                vec![dx, dv]
            }),
        ))
    }

    /// Concatenates tensors `[n, c_i, ...]` along axis 1.
    pub fn concat_channels(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if base.len() < 2 {
            return Err(dim_err!("concat_channels needs at least 2-D tensors"));
        }
        let inner: usize = base[2..].iter().product();
        let n = base[0];
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s[0] != n || s[2..] != base[2..] {
                return Err(dim_err!("concat_channels: {:?} incompatible with {:?}", s, base));
            }
        }
        let chans: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(n * total * inner);
        for i in 0..n {
            for (v, &c) in values.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[i * c * inner..(i + 1) * c * inner]);
            }
        }
        let mut shape = base.clone();
        shape[1] = total;
        let out = Tensor::new(&shape, out)?;
        Ok(first.g().record(
            parts,
            out,
            rule("concat_channels", move |c| {
                let mut grads: Vec<Vec<T>> = chans.iter().map(|&ch| Vec::with_capacity(n * ch * inner)).collect();
                let mut off = 0;
                for _ in 0..n {
                    for (g, &ch) in grads.iter_mut().zip(&chans) {
                        g.extend_from_slice(&c.grad_out[off..off + ch * inner]);
                        off += ch * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Slice `[start, start + len)` of axis 1.
    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 || start + len > shape[1] || len == 0 {
            return Err(dim_err!("narrow_channels [{start}, {}) out of range for {:?}", start + len, shape));
        }
        let (n, ch) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut out = Vec::with_capacity(n * len * inner);
        for i in 0..n {
            let off = (i * ch + start) * inner;
            out.extend_from_slice(&x.data()[off..off + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[1] = len;
        let out = Tensor::new(&oshape, out)?;
        Ok(self.g().record(
            &[self],
            out,
            rule("narrow_channels", move |c| {
                let mut dx = vec![T::zero(); n * ch * inner];
                for i in 0..n {
                    let off = (i * ch + start) * inner;
                    dx[off..off + len * inner].copy_from_slice(&c.grad_out[i * len * inner..(i + 1) * len * inner]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Swaps the last two axes of a 3-D tensor `[b, m, n] -> [b, n, m]`.
    pub fn transpose_last(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let &[b, m, n] = x.shape() else {
            return Err(dim_err!("transpose_last needs a 3-D tensor, got {:?}", x.shape()));
        };
        let out = Tensor::new(&[b, n, m], transpose_batched(x.data(), b, m, n))?;
        Ok(self.g().record(&[self], out, rule("transpose_last", move |c| vec![Some(transpose_batched(c.grad_out, b, n, m))])))
    }

    /// Batched product `[b, m, k] · [b, k, n]`, or `· [b, n, k]ᵀ` when `transpose_rhs`.
    pub fn bmm(self, other: Var<'g, T>, transpose_rhs: bool) -> Result<Var<'g, T>> {
        let (a, bt) = (self.value(), other.value());
        let (&[bs, m, k], &[bs2, r1, r2]) = (a.shape(), bt.shape()) else {
            return Err(dim_err!("bmm needs 3-D operands, got {:?} and {:?}", a.shape(), bt.shape()));
        };
        let (kb, n) = if transpose_rhs { (r2, r1) } else { (r1, r2) };
        if bs != bs2 || k != kb {
            return Err(dim_err!("bmm extents differ: {:?} · {:?} (transposed: {transpose_rhs})", a.shape(), bt.shape()));
        }
        let bmat = if transpose_rhs { Mat::rm(n, k).t() } else { Mat::rm(k, n) };
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            gemm(
                T::one(),
                &a.data()[i * m * k..],
                Mat::rm(m, k),
                &bt.data()[i * k * n..],
                bmat,
                T::zero(),
                &mut out[i * m * n..],
                Mat::rm(m, n),
            );
        }
        let out = Tensor::new(&[bs, m, n], out)?;
        Ok(self.g().record(
            &[self, other],
            out,
            rule("bmm", move |c| {
                let (a, bt) = (&c.inputs[0], &c.inputs[1]);
                let da = c.needs[0].then(|| {
                    let mut da = vec![T::zero(); bs * m * k];
                    for i in 0..bs {
                        gemm(
                            T::one(),
                            &c.grad_out[i * m * n..],
                            Mat::rm(m, n),
                            &bt.data()[i * k * n..],
                            bmat.t(),
                            T::zero(),
                            &mut da[i * m * k..],
                            Mat::rm(m, k),
                        );
                    }
                    da
                });
                let db = c.needs[1].then(|| {
                    let mut db = vec![T::zero(); bs * k * n];
                    for i in 0..bs {
                        // d(B) = Aᵀ·G, or (Aᵀ·G)ᵀ = Gᵀ·A stored as [n, k] when transposed.
                        let (lhs, lm, rhs, rm, om) = if transpose_rhs {
                            (&c.grad_out[i * m * n..], Mat::rm(m, n).t(), &a.data()[i * m * k..], Mat::rm(m, k), Mat::rm(n, k))
                        } else {
                            (&a.data()[i * m * k..], Mat::rm(m, k).t(), &c.grad_out[i * m * n..], Mat::rm(m, n), Mat::rm(k, n))
                        };
                        gemm(T::one(), lhs, lm, rhs, rm, T::zero(), &mut db[i * k * n..], om);
                    }
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| dim_err!("softmax of a 0-D tensor"))?;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.g().record(
            &[self],
            out,
            rule("softmax_last", move |c| {
                let mut dx = vec![T::zero(); c.grad_out.len()];
                for ((d, g), y) in dx.chunks_mut(n).zip(c.grad_out.chunks(n)).zip(c.output.data().chunks(n)) {
                    let dot: T = g.iter().zip(y).map(|(&g, &y)| g * y).sum();
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        *d = y * (g - dot);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

fn transpose_batched<T: Real>(x: &[T], b: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * m * n];
    for bi in 0..b {
        let src = &x[bi * m * n..(bi + 1) * m * n];
        let dst = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}
