//! Convolution diagnostics: the circulant-matrix view of a circular
//! convolution, its diagonalization by the DFT, and Fourier magnitude maps
//! of trained convolution filters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, usage_err, Result};
use crate::models::{Family, Model};
use crate::spectral::{Fft, Rfft2};
use crate::tensor::{Graph, Padding, Real, Tensor};

/// `n × n` row-major matrix with `C[i][j] = w[(i − j) mod n]`, so that
/// `C·f` is the circular convolution `w ⊛ f`.
pub fn circulant_matrix(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = w[(i + n - j) % n];
        }
    }
    c
}

/// `(w ⊛ f)[i] = Σ_j w[(i − j) mod n] f[j]` by direct summation.
pub fn circular_convolution(w: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    if w.len() != f.len() {
        return Err(dim_err!("circular convolution of lengths {} and {}", w.len(), f.len()));
    }
    let n = w.len();
    Ok((0..n).map(|i| (0..n).map(|j| w[(i + n - j) % n] * f[j]).sum()).collect())
}

/// DFT matrix `W[k][j] = e^{−2πi kj/n}`, row-major.
pub fn dft_matrix(n: usize) -> Vec<Complex<f64>> {
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        for j in 0..n {
            // Reduce kj first so the angle stays small and accurate.
            let theta = -2.0 * std::f64::consts::PI * ((k * j) % n) as f64 / n as f64;
            m.push(Complex::from_polar(1.0, theta));
        }
    }
    m
}

/// Largest off-diagonal magnitude of `W·C_w·W*/n`, which the convolution
/// theorem says is the diagonal matrix of `w`'s spectrum.
pub fn diagonalization_residual(w: &[f64]) -> f64 {
    let n = w.len();
    let (dft, c) = (dft_matrix(n), circulant_matrix(w));
    // A = W·C, then B = A·W* / n.
    let mut a = vec![Complex::new(0.0, 0.0); n * n];
    for k in 0..n {
        for j in 0..n {
            a[k * n + j] = (0..n).map(|l| dft[k * n + l] * c[l * n + j]).sum();
        }
    }
    let mut worst: f64 = 0.0;
    for k in 0..n {
        for m in 0..n {
            if k != m {
                let b: Complex<f64> = (0..n).map(|j| a[k * n + j] * dft[m * n + j].conj()).sum::<Complex<f64>>() / n as f64;
                worst = worst.max(b.norm());
            }
        }
    }
    worst
}

/// Evaluates `C_w·f` and the Fourier path `W*·diag(W·w)·W·f / n`, returning
/// their largest absolute difference.
pub fn conv_theorem_check(w: &[f64], f: &[f64]) -> Result<f64> {
    let direct = circular_convolution(w, f)?;
    let fft = Fft::<f64>::new(w.len())?;
    let mut ws: Vec<Complex<f64>> = w.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fs: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut ws);
    fft.forward(&mut fs);
    let mut prod: Vec<Complex<f64>> = ws.iter().zip(&fs).map(|(a, b)| a * b).collect();
    fft.inverse(&mut prod);
    let n = w.len() as f64;
    Ok(direct.iter().zip(&prod).map(|(d, p)| (d - p.re / n).abs()).fold(0.0, f64::max))
}

/// Largest difference between the circular `conv2d` of one `[h, w]` plane
/// with a `[k, k]` kernel and the same product evaluated in Fourier space.
///
/// `conv2d` cross-correlates with a centred kernel, so the kernel is
/// embedded flipped around its centre before the transform.
pub fn conv2d_spectral_check(x: &Tensor<f64>, kernel: &Tensor<f64>) -> Result<f64> {
    let &[h, w] = x.shape() else {
        return Err(dim_err!("expected one [h, w] plane, got {:?}", x.shape()));
    };
    let &[kh, kw] = kernel.shape() else {
        return Err(dim_err!("expected a [k, k] kernel, got {:?}", kernel.shape()));
    };
    let g = Graph::new();
    let direct = g
        .constant(x.clone().reshape(&[1, 1, h, w])?)
        .conv2d(g.constant(kernel.clone().reshape(&[1, 1, kh, kw])?), None, 1, Padding::Circular)?
        .value();

    let mut embedded = vec![0.0; h * w];
    for di in 0..kh {
        for dj in 0..kw {
            let y = (kh / 2 + h * kh - di) % h;
            let xx = (kw / 2 + w * kw - dj) % w;
            embedded[y * w + xx] += kernel.data()[di * kw + dj];
        }
    }
    let plan = Rfft2::<f64>::new(h, w)?;
    let wc = plan.wc();
    let (mut xs, mut ks) = (vec![Complex::new(0.0, 0.0); h * wc], vec![Complex::new(0.0, 0.0); h * wc]);
    plan.forward(x.data(), &mut xs);
    plan.forward(&embedded, &mut ks);
    let prod: Vec<Complex<f64>> = xs.iter().zip(&ks).map(|(a, b)| a * b).collect();
    let mut spectral = vec![0.0; h * w];
    plan.inverse(&prod, &mut spectral);
    Ok(direct.data().iter().zip(&spectral).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Worst deviations found by [`conv_theorem_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTheoremReport {
    /// 1-D pairs checked per length.
    pub pairs: usize,
    pub lengths: Vec<usize>,
    pub max_deviation_1d: f64,
    /// 2-D planes checked.
    pub planes: usize,
    pub max_deviation_2d: f64,
}

impl ConvTheoremReport {
    pub fn to_text(&self) -> String {
        format!(
            "conv_theorem_1d_pairs={}\nconv_theorem_1d_lengths={:?}\nconv_theorem_1d_max_dev={:e}\n\
             conv_theorem_2d_planes={}\nconv_theorem_2d_max_dev={:e}\n",
            self.pairs, self.lengths, self.max_deviation_1d, self.planes, self.max_deviation_2d
        )
    }
}

/// Random `(w, f)` pairs at lengths 8, 16 and 32 plus 16×16 planes with 3×3
/// kernels, all drawn from `U(−1, 1)`.
pub fn conv_theorem_suite(pairs: usize, seed: u64) -> Result<ConvTheoremReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = vec![8, 16, 32];
    let mut max_1d: f64 = 0.0;
    for &n in &lengths {
        for _ in 0..pairs {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            max_1d = max_1d.max(conv_theorem_check(&w, &f)?);
        }
    }
    let planes = 10;
    let mut max_2d: f64 = 0.0;
    for _ in 0..planes {
        let x = Tensor::from_fn(&[16, 16], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0));
        max_2d = max_2d.max(conv2d_spectral_check(&x, &k)?);
    }
    Ok(ConvTheoremReport { pairs, lengths, max_deviation_1d: max_1d, planes, max_deviation_2d: max_2d })
}

/// Mean Fourier magnitude of one convolution layer's filters.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpectrum {
    /// Weight tensor the filters came from.
    pub layer: String,
    /// U-Net level, 0 being the finest.
    pub level: usize,
    pub height: usize,
    pub width: usize,
    /// `[height][width]` magnitudes in FFT order: row `ky`, column `kx`.
    pub magnitude: Vec<f64>,
}

impl FilterSpectrum {
    pub fn at(&self, ky: usize, kx: usize) -> f64 {
        self.magnitude[ky * self.width + kx]
    }

    /// One CSV row per y-mode, one column per x-mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.magnitude.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Binary greyscale PGM (P5), scaled so the largest magnitude is white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let peak = self.magnitude.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.magnitude.iter().map(|&v| if peak > 0.0 { (255.0 * v / peak).round() as u8 } else { 0 }));
        out
    }
}

/// Weight names of the first convolution of each down-block, finest first.
fn first_convs(model_family: Family, levels: usize) -> Result<Vec<String>> {
    match model_family {
        Family::UnetBase => Ok((0..levels).map(|i| format!("enc{i}.conv1.w")).collect()),
        Family::UnetMod | Family::UnetAtt | Family::Ufnet => Ok((0..levels).map(|i| format!("down{i}.0.conv1.w")).collect()),
        Family::Resnet | Family::Fno => {
            Err(usage_err!("filter spectra need a U-Net-family model, got {}", model_family.name()))
        }
    }
}

/// 2-D DFT magnitudes of every `k × k` filter of each down-block's first
/// convolution, zero-padded to that block's feature-map extent and averaged
/// over all filters of the layer.
///
/// `grid` is the input resolution; block `i` sees `grid / 2^i`. A kernel
/// larger than its block wraps around, as the circular convolution does.
pub fn filter_spectrum<T: Real>(model: &Model<T>, grid: (usize, usize)) -> Result<Vec<FilterSpectrum>> {
    let spec = model.spec();
    let levels = spec.multipliers().len();
    let names = first_convs(spec.family, levels)?;
    let (h0, w0) = grid;
    if !(h0.is_power_of_two() && w0.is_power_of_two()) || h0 >> (levels - 1) == 0 || w0 >> (levels - 1) == 0 {
        return Err(dim_err!("grid {h0}×{w0} must be a power of two that survives {} halvings", levels - 1));
    }
    names
        .into_iter()
        .enumerate()
        .map(|(level, name)| {
            let weight = model.param(&name).ok_or_else(|| usage_err!("model has no parameter {name}"))?;
            let (h, w) = (h0 >> level, w0 >> level);
            Ok(FilterSpectrum { magnitude: mean_magnitude(weight, h, w)?, layer: name, level, height: h, width: w })
        })
        .collect()
}

fn mean_magnitude<T: Real>(weight: &Tensor<T>, h: usize, w: usize) -> Result<Vec<f64>> {
    let &[cout, cin, kh, kw] = weight.shape() else {
        return Err(dim_err!("expected a [c_out, c_in, k, k] weight, got {:?}", weight.shape()));
    };
    let (rows, cols) = (Fft::<f64>::new(w)?, Fft::<f64>::new(h)?);
    let mut acc = vec![0.0; h * w];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for filter in weight.data().chunks(kh * kw) {
        buf.fill(Complex::new(0.0, 0.0));
        for di in 0..kh {
            for dj in 0..kw {
                buf[(di % h) * w + dj % w] += Complex::new(filter[di * kw + dj].f64(), 0.0);
            }
        }
        for row in buf.chunks_mut(w) {
            rows.forward(row);
        }
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            cols.forward(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm();
        }
    }
    let n = (cout * cin) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Writes `spectrum_level{i}.csv` and `.pgm` for every block into `dir`.
pub fn write_spectra(spectra: &[FilterSpectrum], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for s in spectra {
        let csv = dir.join(format!("spectrum_level{}.csv", s.level));
        std::fs::write(&csv, s.to_csv())?;
        let pgm = dir.join(format!("spectrum_level{}.pgm", s.level));
        std::fs::write(&pgm, s.to_pgm())?;
        written.extend([csv, pgm]);
    }
    Ok(written)
}
