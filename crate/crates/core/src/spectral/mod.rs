//! Real two-dimensional FFTs and the mode-truncated spectral convolution used
//! by Fourier layers.

mod fft;

pub use num_complex::Complex;
use num_traits::Zero;

use crate::error::{config_err, dim_err, Result};
use crate::tensor::{rule, Padding, Real, Tensor, Var};

pub use fft::Fft;

/// Forward and inverse real 2-D transforms of one `h × w` grid.
///
/// The forward transform is unnormalized and keeps the `w/2 + 1`
/// non-negative frequencies of the last axis. The inverse carries the
/// `1/(h·w)` factor, so `inverse ∘ forward` is the identity.
#[derive(Clone, Debug)]
pub struct Rfft2<T> {
    h: usize,
    w: usize,
    rows: Fft<T>,
    cols: Fft<T>,
}

impl<T: Real> Rfft2<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if w < 2 {
            return Err(config_err!("real FFT needs a last-axis extent of at least 2, got {w}"));
        }
        Ok(Rfft2 { h, w, rows: Fft::new(w)?, cols: Fft::new(h)? })
    }

    /// Extent of the half spectrum's last axis.
    pub fn wc(&self) -> usize {
        self.w / 2 + 1
    }

    /// Transforms one real plane `[h, w]` into its half spectrum `[h, w/2+1]`.
    pub fn forward(&self, x: &[T], out: &mut [Complex<T>]) {
        let (h, w, wc) = (self.h, self.w, self.wc());
        assert_eq!(x.len(), h * w);
        assert_eq!(out.len(), h * wc);
        let mut row = vec![Complex::zero(); w];
        for r in 0..h {
            for (dst, &v) in row.iter_mut().zip(&x[r * w..(r + 1) * w]) {
                *dst = Complex::new(v, T::zero());
            }
            self.rows.forward(&mut row);
            out[r * wc..(r + 1) * wc].copy_from_slice(&row[..wc]);
        }
        self.columns(out, false);
    }

    /// Inverse of [`Rfft2::forward`]. Only the real part of the Hermitian
    /// extension is returned, so imaginary parts of self-conjugate bins are
    /// ignored exactly as a real-output inverse must.
    pub fn inverse(&self, s: &[Complex<T>], out: &mut [T]) {
        let (h, w, wc) = (self.h, self.w, self.wc());
        assert_eq!(s.len(), h * wc);
        assert_eq!(out.len(), h * w);
        let mut half = s.to_vec();
        self.columns(&mut half, true);
        let norm = T::one() / T::of((h * w) as f64);
        let mut row = vec![Complex::zero(); w];
        for r in 0..h {
            let src = &half[r * wc..(r + 1) * wc];
            row[..wc].copy_from_slice(src);
            for k in 1..w - wc + 1 {
                row[w - k] = src[k].conj();
            }
            self.rows.inverse(&mut row);
            for (dst, v) in out[r * w..(r + 1) * w].iter_mut().zip(&row) {
                *dst = v.re * norm;
            }
        }
    }

    fn columns(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, wc) = (self.h, self.wc());
        let mut col = vec![Complex::zero(); h];
        for k in 0..wc {
            for r in 0..h {
                col[r] = buf[r * wc + k];
            }
            if inverse {
                self.cols.inverse(&mut col);
            } else {
                self.cols.forward(&mut col);
            }
            for r in 0..h {
                buf[r * wc + k] = col[r];
            }
        }
    }
}

/// Half spectrum of a real `[b, c, h, w]` tensor, shaped `[b, c, h, w/2+1]`.
///
/// Storage is interleaved `(re, im)` pairs in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T> {
    shape: [usize; 4],
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexSpectrum<T> {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        let shape = [b, c, h, w / 2 + 1];
        ComplexSpectrum { shape, width: w, data: vec![Complex::zero(); shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    /// Spatial width of the signal this spectrum belongs to.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn at(&self, b: usize, c: usize, k1: usize, k2: usize) -> Complex<T> {
        let [_, cc, h, wc] = self.shape;
        self.data[((b * cc + c) * h + k1) * wc + k2]
    }
}

/// Unnormalized forward transform over the last two axes.
pub fn rfft2<T: Real>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (b, c, h, w) = x.dims4()?;
    let plan = Rfft2::new(h, w)?;
    let mut s = ComplexSpectrum::zeros(b, c, h, w);
    let plane = h * plan.wc();
    for (src, dst) in x.data().chunks(h * w).zip(s.data.chunks_mut(plane)) {
        plan.forward(src, dst);
    }
    Ok(s)
}

/// Normalized inverse of [`rfft2`] for a signal of extent `h × w`.
pub fn irfft2<T: Real>(s: &ComplexSpectrum<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [b, c, sh, swc] = s.shape;
    if sh != h || swc != w / 2 + 1 {
        return Err(dim_err!("spectrum {:?} does not belong to a {h}×{w} signal", s.shape));
    }
    let plan = Rfft2::new(h, w)?;
    let mut out = vec![T::zero(); b * c * h * w];
    for (src, dst) in s.data.chunks(sh * swc).zip(out.chunks_mut(h * w)) {
        plan.inverse(src, dst);
    }
    Tensor::new(&[b, c, h, w], out)
}

/// Complex channel-mixing weights of a spectral convolution.
///
/// Each block is a real tensor `[c_in, c_out, m1, m2, 2]` holding `(re, im)`
/// pairs. `pos` acts on first-axis frequencies `0..m1`, `neg` on the
/// `m1` highest rows `h-m1..h`, i.e. the negative frequencies. Both cover
/// last-axis frequencies `0..m2`.
#[derive(Clone, Copy, Debug)]
pub struct SpectralWeights<'g, T: Real> {
    pub pos: Var<'g, T>,
    pub neg: Var<'g, T>,
}

/// Shape of one weight block.
pub fn spectral_block_shape(c_in: usize, c_out: usize, m1: usize, m2: usize) -> [usize; 5] {
    [c_in, c_out, m1, m2, 2]
}

struct Modes {
    cout: usize,
    m1: usize,
    m2: usize,
}

impl Modes {
    /// `(row of the spectrum, block, row inside the block)` for every retained row.
    fn rows(&self, h: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.m1).map(|r| (r, 0, r)).chain((0..self.m1).map(move |r| (h - self.m1 + r, 1, r)))
    }

    fn weight<T: Real>(&self, block: &[T], i: usize, o: usize, r: usize, k2: usize) -> Complex<T> {
        let at = (((i * self.cout + o) * self.m1 + r) * self.m2 + k2) * 2;
        Complex::new(block[at], block[at + 1])
    }

    fn weight_index(&self, i: usize, o: usize, r: usize, k2: usize) -> usize {
        (((i * self.cout + o) * self.m1 + r) * self.m2 + k2) * 2
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// Spectral convolution: transform, mix channels on the retained low
    /// modes, zero every other mode, transform back.
    pub fn spectral_conv(self, weights: &SpectralWeights<'g, T>) -> Result<Var<'g, T>> {
        let x = self.value();
        let (pos, neg) = (weights.pos.value(), weights.neg.value());
        let (b, cin, h, w) = x.dims4()?;
        let &[wcin, cout, m1, m2, two] = pos.shape() else {
            return Err(dim_err!("spectral weights must be [c_in, c_out, m1, m2, 2], got {:?}", pos.shape()));
        };
        if two != 2 || neg.shape() != pos.shape() {
            return Err(dim_err!("spectral weight blocks {:?} and {:?} are inconsistent", pos.shape(), neg.shape()));
        }
        if wcin != cin {
            return Err(dim_err!("spectral_conv: input has {cin} channels, weights expect {wcin}"));
        }
        if 2 * m1 > h || m2 > w / 2 + 1 {
            return Err(config_err!("spectral_conv: cut-offs ({m1}, {m2}) exceed the Nyquist limits of a {h}×{w} grid"));
        }
        let modes = Modes { cout, m1, m2 };
        let plan = Rfft2::new(h, w)?;
        let wc = plan.wc();
        let plane = h * wc;

        let mut xs = vec![Complex::zero(); b * cin * plane];
        for (src, dst) in x.data().chunks(h * w).zip(xs.chunks_mut(plane)) {
            plan.forward(src, dst);
        }
        let mut ys = vec![Complex::<T>::zero(); b * cout * plane];
        for bi in 0..b {
            for (k1, blk, r) in modes.rows(h) {
                let wt = if blk == 0 { pos.data() } else { neg.data() };
                for k2 in 0..m2 {
                    for i in 0..cin {
                        let xv = xs[(bi * cin + i) * plane + k1 * wc + k2];
                        for o in 0..cout {
                            ys[(bi * cout + o) * plane + k1 * wc + k2] += xv * modes.weight(wt, i, o, r, k2);
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); b * cout * h * w];
        for (src, dst) in ys.chunks(plane).zip(out.chunks_mut(h * w)) {
            plan.inverse(src, dst);
        }
        let out = Tensor::new(&[b, cout, h, w], out)?;

        Ok(self.graph().record(
            &[self, weights.pos, weights.neg],
            out,
            rule("spectral_conv", move |c| {
                let (pos, neg) = (&c.inputs[1], &c.inputs[2]);
                // The inverse transform weights interior last-axis bins twice.
                let hw = T::of((h * w) as f64);
                let fold = |k2: usize| if k2 == 0 || 2 * k2 == w { T::one() } else { T::of(2.0) };
                let mut gs = vec![Complex::zero(); b * cout * plane];
                for (src, dst) in c.grad_out.chunks(h * w).zip(gs.chunks_mut(plane)) {
                    plan.forward(src, dst);
                }
                let mut dpos = c.needs[1].then(|| vec![T::zero(); pos.numel()]);
                let mut dneg = c.needs[2].then(|| vec![T::zero(); neg.numel()]);
                let mut gx = c.needs[0].then(|| vec![Complex::<T>::zero(); b * cin * plane]);
                for bi in 0..b {
                    for (k1, blk, r) in modes.rows(h) {
                        let wt = if blk == 0 { pos.data() } else { neg.data() };
                        let mut dw = if blk == 0 { dpos.as_mut() } else { dneg.as_mut() };
                        for k2 in 0..m2 {
                            let scale = fold(k2) / hw;
                            for o in 0..cout {
                                let g = gs[(bi * cout + o) * plane + k1 * wc + k2];
                                for i in 0..cin {
                                    if let Some(dw) = dw.as_deref_mut() {
                                        let xv = xs[(bi * cin + i) * plane + k1 * wc + k2];
                                        let d = g * xv.conj() * scale;
                                        let at = modes.weight_index(i, o, r, k2);
                                        dw[at] += d.re;
                                        dw[at + 1] += d.im;
                                    }
                                    if let Some(gx) = gx.as_mut() {
                                        gx[(bi * cin + i) * plane + k1 * wc + k2] += g * modes.weight(wt, i, o, r, k2).conj();
                                    }
                                }
                            }
                        }
                    }
                }
                // With G = rfft2(g), dL/dX = (fold/hw)·Σ_o G·conj(W); the adjoint of
                // the forward transform cancels the fold and the 1/hw of the inverse.
                let dx = gx.map(|gx| {
                    let mut dx = vec![T::zero(); b * cin * h * w];
                    for (src, dst) in gx.chunks(plane).zip(dx.chunks_mut(h * w)) {
                        plan.inverse(src, dst);
                    }
                    dx
                });
                vec![dx, dpos, dneg]
            }),
        ))
    }
}

/// One Fourier layer: `gelu(spectral_conv(x) + conv1x1(x))`, with no normalization.
pub fn fno_layer<'g, T: Real>(
    x: Var<'g, T>,
    weights: &SpectralWeights<'g, T>,
    w_res: Var<'g, T>,
    b_res: Option<Var<'g, T>>,
) -> Result<Var<'g, T>> {
    let spectral = x.spectral_conv(weights)?;
    let local = x.conv2d(w_res, b_res, 1, Padding::Circular)?;
    Ok(spectral.add(local)?.gelu())
}
