use num_complex::Complex;

use crate::error::{config_err, Result};
use crate::tensor::Real;

/// Precomputed iterative radix-2 transform of one power-of-two length.
///
/// Both directions are unnormalized: `forward` uses `e^{-2πi jk/n}` and
/// `inverse` uses `e^{+2πi jk/n}`, so `inverse(forward(x)) = n·x`.
#[derive(Clone, Debug)]
pub struct Fft<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
    reversed: Vec<usize>,
}

impl<T: Real> Fft<T> {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(config_err!("FFT length {n} is not a power of two"));
        }
        // Twiddles are evaluated in f64 so the f32 tables are correctly rounded.
        let twiddles = (0..n / 2)
            .map(|k| {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::of(theta.cos()), T::of(theta.sin()))
            })
            .collect();
        let bits = n.trailing_zeros();
        let reversed = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        Ok(Fft { n, twiddles, reversed })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, false)
    }

    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true)
    }

    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        assert_eq!(buf.len(), self.n, "buffer length does not match the plan");
        for (i, &j) in self.reversed.iter().enumerate() {
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let step = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let tw = self.twiddles[k * step];
                    let tw = if inverse { tw.conj() } else { tw };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * tw;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len *= 2;
        }
    }
}
