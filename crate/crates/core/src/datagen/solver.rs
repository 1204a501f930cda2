//! Pseudo-spectral solver for 2-D incompressible Navier–Stokes in vorticity form
//! on the periodic square `[0, 2π)²`:
//!
//! `∂ω/∂t + u·∇ω = ν∇²ω + F`, `∇²ψ = −ω`, `u = ∂ψ/∂y`, `v = −∂ψ/∂x`.
//!
//! The forcing is the curl of the Kolmogorov body force `(f·cos(k_f y), 0)`,
//! i.e. `F = f·k_f·sin(k_f y)`. Diffusion is integrated exactly with an
//! integrating factor; advection and forcing use classical RK4.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::spectral::{ComplexSpectrum, Rfft2};

/// Advective stability limit on `dt·(max|u|/dx + max|v|/dy)`.
pub const COURANT_LIMIT: f64 = 1.0;

fn default_grid() -> usize {
    64
}
fn default_viscosity() -> f64 {
    1e-2
}
fn default_forcing() -> f64 {
    0.35
}
fn default_wavenumber() -> usize {
    4
}
fn default_dt() -> f64 {
    0.01
}
fn default_stride() -> usize {
    25
}
fn default_steps() -> usize {
    20
}
fn default_burn_in() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_grid")]
    pub nx: usize,
    #[serde(default = "default_grid")]
    pub ny: usize,
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    /// Forcing amplitude `f`.
    #[serde(default = "default_forcing")]
    pub forcing: f64,
    #[serde(default = "default_wavenumber")]
    pub forcing_wavenumber: usize,
    /// Solver time step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Solver steps between saved snapshots.
    #[serde(default = "default_stride")]
    pub save_stride: usize,
    /// Snapshots kept per trajectory.
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    /// Saved strides discarded before recording.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nx: default_grid(),
            ny: default_grid(),
            viscosity: default_viscosity(),
            forcing: default_forcing(),
            forcing_wavenumber: default_wavenumber(),
            dt: default_dt(),
            save_stride: default_stride(),
            n_steps: default_steps(),
            burn_in: default_burn_in(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Physical time between saved snapshots.
    pub fn dt_save(&self) -> f64 {
        self.dt * self.save_stride as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny)] {
            if n < 4 || !n.is_power_of_two() {
                return Err(config_err!("data.{name} must be a power of two of at least 4, got {n}"));
            }
        }
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return Err(config_err!("data.viscosity must be positive, got {}", self.viscosity));
        }
        if !self.forcing.is_finite() {
            return Err(config_err!("data.forcing must be finite"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config_err!("data.dt must be positive, got {}", self.dt));
        }
        if self.save_stride == 0 || self.n_steps == 0 {
            return Err(config_err!("data.save_stride and data.n_steps must be positive"));
        }
        if self.forcing_wavenumber >= self.ny / 3 {
            return Err(config_err!(
                "data.forcing_wavenumber {} is removed by dealiasing on a grid with ny = {}",
                self.forcing_wavenumber,
                self.ny
            ));
        }
        Ok(())
    }
}

fn signed(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Precomputed wavenumbers, dealiasing mask and transforms for one grid.
#[derive(Clone, Debug)]
pub struct Solver {
    nx: usize,
    ny: usize,
    wc: usize,
    nu: f64,
    dt: f64,
    fft: Rfft2<f64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `1/|k|²` with the mean mode set to 0.
    inv_k2: Vec<f64>,
    mask: Vec<bool>,
    forcing: Vec<Complex<f64>>,
    /// `exp(−ν|k|²dt)` and its half-step counterpart.
    decay: Vec<f64>,
    half_decay: Vec<f64>,
}

/// Physical-space velocity of one state.
pub struct Velocity {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Solver {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (nx, ny) = (cfg.nx, cfg.ny);
        let wc = nx / 2 + 1;
        let mut kx = vec![0.0; ny * wc];
        let mut ky = vec![0.0; ny * wc];
        let mut inv_k2 = vec![0.0; ny * wc];
        let mut mask = vec![false; ny * wc];
        let mut decay = vec![0.0; ny * wc];
        let mut half_decay = vec![0.0; ny * wc];
        for r in 0..ny {
            let y = signed(r, ny);
            for c in 0..wc {
                let i = r * wc + c;
                let x = c as f64;
                kx[i] = x;
                ky[i] = y;
                let k2 = x * x + y * y;
                inv_k2[i] = if k2 > 0.0 { 1.0 / k2 } else { 0.0 };
                // Two-thirds rule: keep |k| ≤ n/3 on each axis.
                mask[i] = 3 * c <= nx && 3.0 * y.abs() <= ny as f64;
                decay[i] = (-cfg.viscosity * k2 * cfg.dt).exp();
                half_decay[i] = (-cfg.viscosity * k2 * cfg.dt * 0.5).exp();
            }
        }
        let fft = Rfft2::new(ny, nx)?;
        let kf = cfg.forcing_wavenumber as f64;
        let dy = 2.0 * std::f64::consts::PI / ny as f64;
        let curl: Vec<f64> = (0..ny * nx).map(|i| cfg.forcing * kf * (kf * (i / nx) as f64 * dy).sin()).collect();
        let mut forcing = vec![Complex::new(0.0, 0.0); ny * wc];
        fft.forward(&curl, &mut forcing);
        for (f, &m) in forcing.iter_mut().zip(&mask) {
            if !m {
                *f = Complex::new(0.0, 0.0);
            }
        }
        forcing[0] = Complex::new(0.0, 0.0);
        Ok(Solver { nx, ny, wc, nu: cfg.viscosity, dt: cfg.dt, fft, kx, ky, inv_k2, mask, forcing, decay, half_decay })
    }

    pub fn spectrum_len(&self) -> usize {
        self.ny * self.wc
    }

    pub fn viscosity(&self) -> f64 {
        self.nu
    }

    /// Half spectrum of a physical field with the dealiasing mask applied.
    pub fn to_spectrum(&self, field: &[f64]) -> Vec<Complex<f64>> {
        let mut s = vec![Complex::new(0.0, 0.0); self.spectrum_len()];
        self.fft.forward(field, &mut s);
        self.dealias(&mut s);
        s
    }

    pub fn to_physical(&self, s: &[Complex<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.ny];
        self.fft.inverse(s, &mut out);
        out
    }

    pub fn dealias(&self, s: &mut [Complex<f64>]) {
        for (v, &m) in s.iter_mut().zip(&self.mask) {
            if !m {
                *v = Complex::new(0.0, 0.0);
            }
        }
    }

    /// Spectral velocity `(û, v̂)` from the vorticity spectrum.
    pub fn velocity_spectra(&self, omega: &[Complex<f64>]) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        let i = Complex::new(0.0, 1.0);
        let mut u = Vec::with_capacity(omega.len());
        let mut v = Vec::with_capacity(omega.len());
        for (k, &w) in omega.iter().enumerate() {
            let psi = w * self.inv_k2[k];
            u.push(i * self.ky[k] * psi);
            v.push(-i * self.kx[k] * psi);
        }
        (u, v)
    }

    pub fn velocity(&self, omega: &[Complex<f64>]) -> Velocity {
        let (u, v) = self.velocity_spectra(omega);
        Velocity { u: self.to_physical(&u), v: self.to_physical(&v) }
    }

    /// Spectral divergence `i kx û + i ky v̂`.
    pub fn divergence(&self, u: &[Complex<f64>], v: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let i = Complex::new(0.0, 1.0);
        (0..u.len()).map(|k| i * (self.kx[k] * u[k] + self.ky[k] * v[k])).collect()
    }

    pub fn courant(&self, vel: &Velocity) -> f64 {
        let dx = 2.0 * std::f64::consts::PI / self.nx as f64;
        let dy = 2.0 * std::f64::consts::PI / self.ny as f64;
        let umax = vel.u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let vmax = vel.v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.dt * (umax / dx + vmax / dy)
    }

    /// `−(u·∇ω) + F` in spectral space, dealiased. Also returns the
    /// physical velocity so the caller can check the Courant number.
    fn rhs(&self, omega: &[Complex<f64>]) -> (Vec<Complex<f64>>, Velocity) {
        let i = Complex::new(0.0, 1.0);
        let vel = self.velocity(omega);
        let wx: Vec<_> = omega.iter().enumerate().map(|(k, &w)| i * self.kx[k] * w).collect();
        let wy: Vec<_> = omega.iter().enumerate().map(|(k, &w)| i * self.ky[k] * w).collect();
        let (wx, wy) = (self.to_physical(&wx), self.to_physical(&wy));
        let adv: Vec<f64> = (0..wx.len()).map(|p| vel.u[p] * wx[p] + vel.v[p] * wy[p]).collect();
        let mut out = self.to_spectrum(&adv);
        for (o, &f) in out.iter_mut().zip(&self.forcing) {
            *o = f - *o;
        }
        (out, vel)
    }

    /// Advances `omega` (a dealiased half spectrum) by one step.
    pub fn step(&self, omega: &mut [Complex<f64>]) -> Result<()> {
        if omega.len() != self.spectrum_len() {
            return Err(dim_err!("vorticity spectrum has {} bins, grid needs {}", omega.len(), self.spectrum_len()));
        }
        let h = self.dt;
        let (a, vel) = self.rhs(omega);
        let courant = self.courant(&vel);
        if !(courant <= COURANT_LIMIT) {
            return Err(Error::StepSize { courant, limit: COURANT_LIMIT });
        }
        let n = omega.len();
        let e = &self.decay;
        let e2 = &self.half_decay;
        let stage: Vec<_> = (0..n).map(|k| e2[k] * (omega[k] + a[k] * (h / 2.0))).collect();
        let (b, _) = self.rhs(&stage);
        let stage: Vec<_> = (0..n).map(|k| e2[k] * omega[k] + b[k] * (h / 2.0)).collect();
        let (c, _) = self.rhs(&stage);
        let stage: Vec<_> = (0..n).map(|k| e[k] * omega[k] + e2[k] * c[k] * h).collect();
        let (d, _) = self.rhs(&stage);
        for k in 0..n {
            omega[k] = e[k] * omega[k] + (e[k] * a[k] + e2[k] * (b[k] + c[k]) * 2.0 + d[k]) * (h / 6.0);
        }
        self.dealias(omega);
        Ok(())
    }
}

/// One solver step on a `[1, 1, ny, nx/2+1]` vorticity spectrum.
pub fn ns_vorticity_step(omega_hat: &ComplexSpectrum<f64>, cfg: &SolverConfig) -> Result<ComplexSpectrum<f64>> {
    let [b, c, h, _] = omega_hat.shape();
    if b != 1 || c != 1 || h != cfg.ny || omega_hat.width() != cfg.nx {
        return Err(dim_err!("spectrum {:?} does not match a {}×{} grid", omega_hat.shape(), cfg.ny, cfg.nx));
    }
    let solver = Solver::new(cfg)?;
    let mut out = omega_hat.clone();
    solver.step(out.data_mut())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(n: usize, dt: f64, forcing: f64) -> SolverConfig {
        SolverConfig { nx: n, ny: n, dt, forcing, viscosity: 1e-2, ..SolverConfig::default() }
    }

    fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let d = 2.0 * PI / n as f64;
        (0..n * n).map(|i| f((i % n) as f64 * d, (i / n) as f64 * d)).collect()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_state_stays_zero() {
        let s = Solver::new(&cfg(16, 0.05, 0.0)).unwrap();
        let mut w = vec![Complex::new(0.0, 0.0); s.spectrum_len()];
        for _ in 0..10 {
            s.step(&mut w).unwrap();
        }
        assert!(w.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn single_mode_decays_viscously() {
        let (a, k, dt, steps) = (1.3, 3.0, 0.05, 100);
        let s = Solver::new(&cfg(32, dt, 0.0)).unwrap();
        let mut w = s.to_spectrum(&grid(32, |x, _| a * (k * x).cos()));
        for _ in 0..steps {
            s.step(&mut w).unwrap();
        }
        let got = s.to_physical(&w);
        let t = dt * steps as f64;
        let want = grid(32, |x, _| a * (-1e-2 * k * k * t).exp() * (k * x).cos());
        assert!(rel_l2(&got, &want) < 1e-5, "{}", rel_l2(&got, &want));
    }

    #[test]
    fn taylor_green_matches_closed_form() {
        let (dt, steps) = (0.05, 50);
        let s = Solver::new(&cfg(32, dt, 0.0)).unwrap();
        let mut w = s.to_spectrum(&grid(32, |x, y| 2.0 * x.sin() * y.sin()));
        for _ in 0..steps {
            s.step(&mut w).unwrap();
        }
        let t = dt * steps as f64;
        let want = grid(32, |x, y| 2.0 * x.sin() * y.sin() * (-2.0 * 1e-2 * t).exp());
        let err = rel_l2(&s.to_physical(&w), &want);
        assert!(err < 1e-4, "{err}");
    }

    fn smooth_field(n: usize) -> Vec<f64> {
        grid(n, |x, y| (x + 2.0 * y).sin() + 0.7 * (3.0 * x - y).cos() + 0.4 * (2.0 * x).sin() * (y + 1.0).cos())
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let run = |dt: f64, steps: usize| {
            let s = Solver::new(&SolverConfig { forcing: 0.3, ..cfg(32, dt, 0.3) }).unwrap();
            let mut w = s.to_spectrum(&smooth_field(32));
            for _ in 0..steps {
                s.step(&mut w).unwrap();
            }
            s.to_physical(&w)
        };
        let coarse = run(0.1, 10);
        let mid = run(0.05, 20);
        let fine = run(0.025, 40);
        let e1: f64 = coarse.iter().zip(&mid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let e2: f64 = mid.iter().zip(&fine).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn velocity_is_divergence_free_and_mean_is_kept() {
        let s = Solver::new(&cfg(32, 0.05, 0.4)).unwrap();
        let mut w = s.to_spectrum(&smooth_field(32));
        for _ in 0..20 {
            s.step(&mut w).unwrap();
            let (u, v) = s.velocity_spectra(&w);
            let div = s.divergence(&u, &v);
            let worst = s.to_physical(&div).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(worst <= 1e-8, "{worst}");
            assert!(w[0].norm() <= 1e-12);
        }
    }

    #[test]
    fn forcing_is_mean_free_curl_of_the_body_force() {
        let c = cfg(32, 0.05, 0.5);
        let s = Solver::new(&c).unwrap();
        assert_eq!(s.forcing[0], Complex::new(0.0, 0.0));
        let f = s.to_physical(&s.forcing);
        let want = grid(32, |_, y| 0.5 * 4.0 * (4.0 * y).sin());
        assert!(f.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn courant_violation_is_reported() {
        let s = Solver::new(&cfg(32, 2.0, 0.0)).unwrap();
        let mut w = s.to_spectrum(&grid(32, |x, y| 10.0 * (x + y).sin()));
        match s.step(&mut w) {
            Err(Error::StepSize { courant, limit }) => assert!(courant > limit),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spectrum_wrapper_matches_solver() {
        let c = cfg(16, 0.05, 0.2);
        let s = Solver::new(&c).unwrap();
        let mut spec = ComplexSpectrum::zeros(1, 1, 16, 16);
        spec.data_mut().copy_from_slice(&s.to_spectrum(&smooth_field(16)));
        let out = ns_vorticity_step(&spec, &c).unwrap();
        let mut direct = spec.data().to_vec();
        s.step(&mut direct).unwrap();
        assert_eq!(out.data(), &direct[..]);
        assert!(ns_vorticity_step(&spec, &cfg(32, 0.05, 0.2)).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            SolverConfig { nx: 48, ..SolverConfig::default() },
            SolverConfig { viscosity: 0.0, ..SolverConfig::default() },
            SolverConfig { dt: -1.0, ..SolverConfig::default() },
            SolverConfig { forcing_wavenumber: 8, nx: 16, ny: 16, ..SolverConfig::default() },
        ] {
            assert!(matches!(Solver::new(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
