//! Ground-truth data: Navier–Stokes trajectories under a parameterized
//! Kolmogorov forcing, and the normalized dataset container.

mod dataset;
mod solver;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{config_err, Result};

pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, Dataset, DatasetShape, Normalization, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use solver::{ns_vorticity_step, Solver, SolverConfig, Velocity, COURANT_LIMIT};

/// Stored fields per snapshot: vorticity and the two velocity components.
pub const FIELDS: [&str; 3] = ["vorticity", "velocity_x", "velocity_y"];

/// Highest wavenumber magnitude present in initial conditions.
pub const INITIAL_MAX_MODE: f64 = 6.0;

/// Saved snapshots of one run, `[n_steps][3][ny][nx]` in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub nx: usize,
    pub ny: usize,
    pub n_steps: usize,
    pub forcing: f64,
    pub dt_save: f64,
    pub seed: u64,
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn snapshot(&self, step: usize) -> &[f64] {
        let len = FIELDS.len() * self.nx * self.ny;
        &self.data[step * len..(step + 1) * len]
    }

    pub fn field(&self, step: usize, field: usize) -> &[f64] {
        let plane = self.nx * self.ny;
        &self.snapshot(step)[field * plane..(field + 1) * plane]
    }
}

/// Random mean-free vorticity with modes `1 ≤ |k| ≤ 6` and unit RMS.
pub fn initial_vorticity(solver: &Solver, nx: usize, ny: usize, seed: u64) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wc = nx / 2 + 1;
    let mut s = vec![Complex::new(0.0, 0.0); ny * wc];
    for r in 0..ny {
        let ky = if r <= ny / 2 { r as f64 } else { r as f64 - ny as f64 };
        for c in 0..wc {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let k = (ky * ky + (c * c) as f64).sqrt();
            if k > 0.0 && k <= INITIAL_MAX_MODE {
                s[r * wc + c] = Complex::new(re, im);
            }
        }
    }
    // A round trip through physical space enforces Hermitian symmetry.
    let mut w = solver.to_physical(&s);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let rms = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    for x in &mut w {
        *x = (*x - mean) / rms;
    }
    let mut out = solver.to_spectrum(&w);
    out[0] = Complex::new(0.0, 0.0);
    out
}

/// Runs burn-in, then records `n_steps` snapshots one save stride apart.
pub fn generate_trajectory(cfg: &SolverConfig) -> Result<Trajectory> {
    let solver = Solver::new(cfg)?;
    let (nx, ny) = (cfg.nx, cfg.ny);
    let mut omega = initial_vorticity(&solver, nx, ny, cfg.seed);
    for _ in 0..cfg.burn_in * cfg.save_stride {
        solver.step(&mut omega)?;
    }
    let mut data = Vec::with_capacity(cfg.n_steps * FIELDS.len() * nx * ny);
    for t in 0..cfg.n_steps {
        if t > 0 {
            for _ in 0..cfg.save_stride {
                solver.step(&mut omega)?;
            }
        }
        data.extend(solver.to_physical(&omega));
        let vel = solver.velocity(&omega);
        data.extend(vel.u);
        data.extend(vel.v);
    }
    Ok(Trajectory { nx, ny, n_steps: cfg.n_steps, forcing: cfg.forcing, dt_save: cfg.dt_save(), seed: cfg.seed, data })
}

/// Runs one trajectory per `(forcing, seed)` pair on `workers` threads
/// (0 = all cores); results keep the input order.
pub fn generate_trajectories(template: &SolverConfig, runs: &[(f64, u64)], workers: usize) -> Result<Vec<Trajectory>> {
    template.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| config_err!("cannot start {workers} workers: {e}"))?;
    pool.install(|| {
        runs.par_iter()
            .map(|&(forcing, seed)| generate_trajectory(&SolverConfig { forcing, seed, ..template.clone() }))
            .collect()
    })
}

/// Forcing values drawn uniformly from `[lo, hi]` and one initial-condition
/// seed per trajectory, all from a stream seeded by `seed`.
pub fn sample_runs(n_traj: usize, f_range: (f64, f64), seed: u64) -> Result<Vec<(f64, u64)>> {
    let (lo, hi) = f_range;
    if n_traj == 0 {
        return Err(config_err!("data.n_traj must be at least 1"));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(config_err!("data.f_range must satisfy lo <= hi, got [{lo}, {hi}]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_traj)
        .map(|_| {
            let u: f64 = rng.random();
            (lo + (hi - lo) * u, rng.random::<u64>())
        })
        .collect())
}

/// Generates `n_traj` trajectories with forcing sampled from `f_range` and
/// normalizes them with statistics over the whole set.
pub fn generate_dataset(n_traj: usize, f_range: (f64, f64), template: &SolverConfig, workers: usize) -> Result<Dataset> {
    let runs = sample_runs(n_traj, f_range, template.seed)?;
    let trajs = generate_trajectories(template, &runs, workers)?;
    Dataset::from_trajectories(&trajs, template.burn_in, None)
}
