//! Spatial operators on `[batch, channels, height, width]` tensors.

use serde::{Deserialize, Serialize};

use super::ops::rule;
use super::{gemm, Mat, Real, Tensor, Var};
use crate::error::{config_err, dim_err, Result};

/// Boundary handling for same-size convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Indices wrap around modulo the extent (periodic domains).
    #[default]
    Circular,
    /// Out-of-range taps read zero.
    Zero,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    padding: Padding,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }


    /// Source coordinate along one axis for every `(tap, output)` pair,
    /// `NONE` where the tap reads zero padding.
    fn axis_taps(&self, extent: usize, out: usize, k: usize) -> Vec<usize> {
        let mut t = Vec::with_capacity(k * out);
        for d in 0..k {
            for o in 0..out {
                let i = (o * self.stride + d) as isize - (k / 2) as isize;
                t.push(match self.padding {
                    Padding::Circular => i.rem_euclid(extent as isize) as usize,
                    Padding::Zero if (0..extent as isize).contains(&i) => i as usize,
                    Padding::Zero => NONE,
                });
            }
        }
        t
    }

    /// Wide stride-1 rows are moved as shifted slices; everything else goes
    /// through a per-element gather table.
    fn taps(&self) -> Taps {
        let ty = self.axis_taps(self.h, self.oh, self.kh);
        if self.stride == 1 && self.w >= WIDE_ROW.max(self.kw) {
            return Taps::Rows(ty);
        }
        let tx = self.axis_taps(self.w, self.ow, self.kw);
        let mut flat = Vec::with_capacity(self.kh * self.kw * self.p());
        for di in 0..self.kh {
            for dj in 0..self.kw {
                for oy in 0..self.oh {
                    let sy = ty[di * self.oh + oy];
                    for ox in 0..self.ow {
                        let sx = tx[dj * self.ow + ox];
                        flat.push(if sy == NONE || sx == NONE { NONE } else { sy * self.w + sx });
                    }
                }
            }
        }
        Taps::Flat(flat)
    }

    /// Horizontal offset of tap `dj` on a stride-1 row.
    fn shift(&self, dj: usize) -> isize {
        dj as isize - (self.kw / 2) as isize
    }

    /// Unfolds one sample `[cin, h, w]` into columns `[cin·kh·kw, oh·ow]`
    /// whose rows start `ld` elements apart.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T], ld: usize, taps: &Taps) {
        let (p, hw, kk) = (self.p(), self.h * self.w, self.kh * self.kw);
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for t in 0..kk {
                let row = &mut cols[(ci * kk + t) * ld..][..p];
                match taps {
                    Taps::Flat(flat) => {
                        for (o, &s) in row.iter_mut().zip(&flat[t * p..(t + 1) * p]) {
                            *o = if s == NONE { T::zero() } else { plane[s] };
                        }
                    }
                    Taps::Rows(ty) => {
                        let (di, d) = (t / self.kw, self.shift(t % self.kw));
                        for (oy, out) in row.chunks_mut(self.ow).enumerate() {
                            let sy = ty[di * self.oh + oy];
                            if sy == NONE {
                                out.fill(T::zero());
                                continue;
                            }
                            let src = &plane[sy * self.w..(sy + 1) * self.w];
                            let n = self.w - d.unsigned_abs();
                            match (self.padding, d >= 0) {
                                (Padding::Circular, _) => {
                                    let r = d.rem_euclid(self.w as isize) as usize;
                                    out[..self.w - r].copy_from_slice(&src[r..]);
                                    out[self.w - r..].copy_from_slice(&src[..r]);
                                }
                                (Padding::Zero, true) => {
                                    out[..n].copy_from_slice(&src[d as usize..]);
                                    out[n..].fill(T::zero());
                                }
                                (Padding::Zero, false) => {
                                    out[..self.w - n].fill(T::zero());
                                    out[self.w - n..].copy_from_slice(&src[..n]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds columns into `dx`.
    fn col2im<T: Real>(&self, cols: &[T], ld: usize, dx: &mut [T], taps: &Taps) {
        let (p, hw, kk) = (self.p(), self.h * self.w, self.kh * self.kw);
        let add = |d: &mut [T], g: &[T]| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
        for ci in 0..self.cin {
            let plane = &mut dx[ci * hw..(ci + 1) * hw];
            for t in 0..kk {
                let row = &cols[(ci * kk + t) * ld..][..p];
                match taps {
                    Taps::Flat(flat) => {
                        for (&g, &s) in row.iter().zip(&flat[t * p..(t + 1) * p]) {
                            if s != NONE {
                                plane[s] += g;
                            }
                        }
                    }
                    Taps::Rows(ty) => {
                        let (di, d) = (t / self.kw, self.shift(t % self.kw));
                        for (oy, inp) in row.chunks(self.ow).enumerate() {
                            let sy = ty[di * self.oh + oy];
                            if sy == NONE {
                                continue;
                            }
                            let dst = &mut plane[sy * self.w..(sy + 1) * self.w];
                            let n = self.w - d.unsigned_abs();
                            match (self.padding, d >= 0) {
                                (Padding::Circular, _) => {
                                    let r = d.rem_euclid(self.w as isize) as usize;
                                    add(&mut dst[r..], &inp[..self.w - r]);
                                    add(&mut dst[..r], &inp[self.w - r..]);
                                }
                                (Padding::Zero, true) => add(&mut dst[d as usize..], &inp[..n]),
                                (Padding::Zero, false) => add(&mut dst[..n], &inp[self.w - n..]),
                            }
                        }
                    }
                }
            }
        }
    }
}

const NONE: usize = usize::MAX;

/// Stride-1 rows at least this wide are unfolded slice by slice.
const WIDE_ROW: usize = 16;

/// Precomputed source indices of a convolution's taps.
enum Taps {
    /// Source row per `(di, oy)`.
    Rows(Vec<usize>),
    /// Source element per `(di, dj, oy, ox)`.
    Flat(Vec<usize>),
}

/// Upper bound on unfolded elements held at once by a convolution.
const COLS_BUDGET: usize = 1 << 17;

impl<'g, T: Real> Var<'g, T> {
    /// 2-D cross-correlation with same-size padding.
    ///
    /// `self: [b, c_in, h, w]`, `weight: [c_out, c_in, kh, kw]` with odd kernel
    /// extents, `bias: [c_out]`. Output is `[b, c_out, h/stride, w/stride]`.
    /// Grids smaller than the kernel are accepted, which the coarsest U-Net
    /// levels need: circular taps wrap more than once, zero taps read padding.
    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, padding: Padding) -> Result<Var<'g, T>> {
        let (x, wt) = (self.value(), weight.value());
        let (b, cin, h, w) = x.dims4()?;
        let &[cout, wcin, kh, kw] = wt.shape() else {
            return Err(dim_err!("conv2d weight must be 4-D, got {:?}", wt.shape()));
        };
        if wcin != cin {
            return Err(dim_err!("conv2d: input has {cin} channels, weight expects {wcin}"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(config_err!("conv2d: same-size padding needs odd kernel extents, got {kh}×{kw}"));
        }
        if stride == 0 {
            return Err(config_err!("conv2d: stride must be positive"));
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(dim_err!("conv2d: extents {h}×{w} not divisible by stride {stride}"));
        }
        if let Some(bv) = bias {
            if bv.value().shape() != [cout] {
                return Err(dim_err!("conv2d bias {:?} does not match {cout} output channels", bv.value().shape()));
            }
        }
        let geom = ConvGeom { cin, h, w, kh, kw, stride, oh: h / stride, ow: w / stride, padding };
        let (k, p) = (geom.k(), geom.p());
        let taps = geom.taps();
        // Several samples share one GEMM; small channel counts make
        // per-sample products too thin to run efficiently.
        let nb = (COLS_BUDGET / (k * p)).clamp(1, b);
        let sample = cin * h * w;
        let mut out = vec![T::zero(); b * cout * p];
        let mut cols = vec![T::zero(); k * nb * p];
        let mut tmp = vec![T::zero(); cout * nb * p];
        for b0 in (0..b).step_by(nb) {
            let n = nb.min(b - b0);
            let ld = n * p;
            for s in 0..n {
                geom.im2col(&x.data()[(b0 + s) * sample..][..sample], &mut cols[s * p..], ld, &taps);
            }
            gemm(T::one(), wt.data(), Mat::rm(cout, k), &cols, Mat::rm(k, ld), T::zero(), &mut tmp, Mat::rm(cout, ld));
            let bv = bias.map(|bv| bv.value());
            for s in 0..n {
                for co in 0..cout {
                    let dst = &mut out[((b0 + s) * cout + co) * p..][..p];
                    dst.copy_from_slice(&tmp[co * ld + s * p..][..p]);
                    if let Some(bv) = &bv {
                        let bc = bv.data()[co];
                        dst.iter_mut().for_each(|v| *v += bc);
                    }
                }
            }
        }
        let out = Tensor::new(&[b, cout, geom.oh, geom.ow], out)?;

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.graph().record(
            &inputs,
            out,
            rule("conv2d", move |c| {
                let (x, wt) = (&c.inputs[0], &c.inputs[1]);
                let mut dx = c.needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut dw = c.needs[1].then(|| vec![T::zero(); wt.numel()]);
                let mut cols = vec![T::zero(); k * nb * p];
                let mut g = vec![T::zero(); cout * nb * p];
                for b0 in (0..b).step_by(nb) {
                    let n = nb.min(b - b0);
                    let ld = n * p;
                    for s in 0..n {
                        for co in 0..cout {
                            g[co * ld + s * p..][..p].copy_from_slice(&c.grad_out[((b0 + s) * cout + co) * p..][..p]);
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        for s in 0..n {
                            geom.im2col(&x.data()[(b0 + s) * sample..][..sample], &mut cols[s * p..], ld, &taps);
                        }
                        gemm(T::one(), &g, Mat::rm(cout, ld), &cols, Mat::rm(k, ld).t(), T::one(), dw, Mat::rm(cout, k));
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(T::one(), wt.data(), Mat::rm(cout, k).t(), &g, Mat::rm(cout, ld), T::zero(), &mut cols, Mat::rm(k, ld));
                        for s in 0..n {
                            geom.col2im(&cols[s * p..], ld, &mut dx[(b0 + s) * sample..][..sample], &taps);
                        }
                    }
                }
                let mut grads = vec![dx, dw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| {
                        let mut db = vec![T::zero(); cout];
                        for gs in c.grad_out.chunks(p).collect::<Vec<_>>().chunks(cout) {
                            for (d, row) in db.iter_mut().zip(gs) {
                                *d += row.iter().copied().sum::<T>();
                            }
                        }
                        db
                    }));
                }
                grads
            }),
        ))
    }

    /// Transposed convolution with a 2×2 kernel and stride 2 (exact ×2
    /// upsampling). `weight: [c_in, c_out, 2, 2]`, `bias: [c_out]`.
    pub fn conv_transpose2x2(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let (x, wt) = (self.value(), weight.value());
        let (b, cin, h, w) = x.dims4()?;
        let &[wcin, cout, 2, 2] = wt.shape() else {
            return Err(dim_err!("conv_transpose2x2 weight must be [c_in, c_out, 2, 2], got {:?}", wt.shape()));
        };
        if wcin != cin {
            return Err(dim_err!("conv_transpose2x2: input has {cin} channels, weight expects {wcin}"));
        }
        if let Some(bv) = bias {
            if bv.value().shape() != [cout] {
                return Err(dim_err!("conv_transpose2x2 bias {:?} does not match {cout}", bv.value().shape()));
            }
        }
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let q = cout * 4;
        let mut z = vec![T::zero(); q * hw];
        let mut out = vec![T::zero(); b * cout * oh * ow];
        for bi in 0..b {
            let xs = &x.data()[bi * cin * hw..(bi + 1) * cin * hw];
            gemm(T::one(), wt.data(), Mat::rm(cin, q).t(), xs, Mat::rm(cin, hw), T::zero(), &mut z, Mat::rm(q, hw));
            let os = &mut out[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
            for co in 0..cout {
                let bc = bias.map(|bv| bv.value().data()[co]).unwrap_or_else(T::zero);
                for ab in 0..4 {
                    let (a, bb) = (ab / 2, ab % 2);
                    let zr = &z[(co * 4 + ab) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            os[co * oh * ow + (2 * i + a) * ow + 2 * j + bb] = zr[i * w + j] + bc;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[b, cout, oh, ow], out)?;
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.graph().record(
            &inputs,
            out,
            rule("conv_transpose2x2", move |c| {
                let (x, wt) = (&c.inputs[0], &c.inputs[1]);
                let mut dx = c.needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut dw = c.needs[1].then(|| vec![T::zero(); wt.numel()]);
                let mut db = (c.inputs.len() == 3 && c.needs[2]).then(|| vec![T::zero(); cout]);
                let mut dz = vec![T::zero(); q * hw];
                for bi in 0..b {
                    let gs = &c.grad_out[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
                    for co in 0..cout {
                        for ab in 0..4 {
                            let (a, bb) = (ab / 2, ab % 2);
                            let zr = &mut dz[(co * 4 + ab) * hw..][..hw];
                            for i in 0..h {
                                for j in 0..w {
                                    zr[i * w + j] = gs[co * oh * ow + (2 * i + a) * ow + 2 * j + bb];
                                }
                            }
                        }
                        if let Some(db) = db.as_mut() {
                            db[co] += gs[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
                        }
                    }
                    let xs = &x.data()[bi * cin * hw..(bi + 1) * cin * hw];
                    if let Some(dw) = dw.as_mut() {
                        gemm(T::one(), xs, Mat::rm(cin, hw), &dz, Mat::rm(q, hw).t(), T::one(), dw, Mat::rm(cin, q));
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[bi * cin * hw..(bi + 1) * cin * hw];
                        gemm(T::one(), wt.data(), Mat::rm(cin, q), &dz, Mat::rm(q, hw), T::zero(), dxs, Mat::rm(cin, hw));
                    }
                }
                let mut grads = vec![dx, dw];
                if c.inputs.len() == 3 {
                    grads.push(db);
                }
                grads
            }),
        ))
    }

    /// Max pooling over non-overlapping `window × window` tiles. Gradients
    /// route to the first maximal element in row-major order.
    pub fn max_pool2d(self, window: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (b, ch, h, w) = x.dims4()?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(dim_err!("max_pool2d: extents {h}×{w} not divisible by window {window}"));
        }
        let (oh, ow) = (h / window, w / window);
        let mut out = Vec::with_capacity(b * ch * oh * ow);
        let mut arg = Vec::with_capacity(b * ch * oh * ow);
        for plane in 0..b * ch {
            let xs = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (T::neg_infinity(), 0);
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = (oy * window + dy) * w + ox * window + dx;
                            if xs[idx] > best.0 {
                                best = (xs[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    arg.push(plane * h * w + best.1);
                }
            }
        }
        let out = Tensor::new(&[b, ch, oh, ow], out)?;
        let n = x.numel();
        Ok(self.graph().record(
            &[self],
            out,
            rule("max_pool2d", move |c| {
                let mut dx = vec![T::zero(); n];
                for (&g, &i) in c.grad_out.iter().zip(&arg) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor × factor` tile.
    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (b, ch, h, w) = x.dims4()?;
        if factor == 0 {
            return Err(config_err!("upsample factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(b * ch * oh * ow);
        for plane in x.data().chunks(h * w) {
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..][..w];
                for ox in 0..ow {
                    out.push(row[ox / factor]);
                }
            }
        }
        let out = Tensor::new(&[b, ch, oh, ow], out)?;
        Ok(self.graph().record(
            &[self],
            out,
            rule("upsample_nearest", move |c| {
                let mut dx = vec![T::zero(); b * ch * h * w];
                for (plane, g) in dx.chunks_mut(h * w).zip(c.grad_out.chunks(oh * ow)) {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            plane[(oy / factor) * w + ox / factor] += g[oy * ow + ox];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}
