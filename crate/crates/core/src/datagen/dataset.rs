//! Normalized trajectory store and its little-endian container:
//!
//! `"NPDE" | version u32 | n_traj u32 | n_steps u32 | n_fields u32 | ny u32 |
//! nx u32 | dt_save f64 | burn_in u32 | param_dim u32 | mean f64[n_fields] |
//! std f64[n_fields] | params f64[n_traj][param_dim] |
//! data f32[n_traj][n_steps][n_fields][ny][nx]`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use super::{Trajectory, FIELDS};
use crate::error::{config_err, dim_err, Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"NPDE";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetShape {
    pub n_traj: usize,
    pub n_steps: usize,
    pub n_fields: usize,
    pub ny: usize,
    pub nx: usize,
}

impl DatasetShape {
    pub fn frame_len(&self) -> usize {
        self.n_fields * self.ny * self.nx
    }

    fn numel(&self) -> Option<usize> {
        [self.n_traj, self.n_steps, self.n_fields, self.ny, self.nx].iter().try_fold(1usize, |a, &b| a.checked_mul(b))
    }
}

/// Per-field statistics; stored values are `(raw − mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n_fields: usize) -> Self {
        Normalization { mean: vec![0.0; n_fields], std: vec![1.0; n_fields] }
    }

    /// Population statistics over every trajectory, step and pixel. A field
    /// with zero spread keeps unit scale.
    pub fn fit(trajs: &[Trajectory]) -> Self {
        let n_fields = FIELDS.len();
        let mut mean = vec![0.0; n_fields];
        let mut std = vec![0.0; n_fields];
        let mut count = 0usize;
        for t in trajs {
            for s in 0..t.n_steps {
                for (f, m) in mean.iter_mut().enumerate() {
                    *m += t.field(s, f).iter().sum::<f64>();
                }
            }
            count += t.n_steps * t.nx * t.ny;
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for t in trajs {
            for s in 0..t.n_steps {
                for (f, v) in std.iter_mut().enumerate() {
                    *v += t.field(s, f).iter().map(|x| (x - mean[f]).powi(2)).sum::<f64>();
                }
            }
        }
        for v in &mut std {
            *v = (*v / count as f64).sqrt();
            if !(*v > 0.0) {
                *v = 1.0;
            }
        }
        Normalization { mean, std }
    }
}

/// Normalized snapshots of many trajectories sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: DatasetShape,
    dt_save: f64,
    burn_in: usize,
    param_dim: usize,
    norm: Normalization,
    params: Vec<f64>,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(
        shape: DatasetShape,
        dt_save: f64,
        burn_in: usize,
        norm: Normalization,
        params: Vec<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if shape.n_traj == 0 || shape.n_steps == 0 || shape.n_fields == 0 || shape.ny == 0 || shape.nx == 0 {
            return Err(dim_err!("dataset extents must be positive, got {shape:?}"));
        }
        if shape.numel() != Some(data.len()) {
            return Err(dim_err!("dataset {shape:?} needs {:?} values, got {}", shape.numel(), data.len()));
        }
        if params.len() % shape.n_traj != 0 {
            return Err(dim_err!("{} parameters do not split over {} trajectories", params.len(), shape.n_traj));
        }
        if norm.mean.len() != shape.n_fields || norm.std.len() != shape.n_fields {
            return Err(dim_err!("normalization has {} fields, data has {}", norm.mean.len(), shape.n_fields));
        }
        let param_dim = params.len() / shape.n_traj;
        Ok(Dataset { shape, dt_save, burn_in, param_dim, norm, params, data })
    }

    /// Stacks trajectories, storing the forcing amplitude as the single
    /// per-trajectory parameter. Statistics are fitted unless given.
    pub fn from_trajectories(trajs: &[Trajectory], burn_in: usize, norm: Option<Normalization>) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| config_err!("a dataset needs at least one trajectory"))?;
        for t in trajs {
            if (t.nx, t.ny, t.n_steps) != (first.nx, first.ny, first.n_steps) || t.dt_save != first.dt_save {
                return Err(dim_err!("trajectories differ in grid, length or save interval"));
            }
        }
        let norm = norm.unwrap_or_else(|| Normalization::fit(trajs));
        let plane = first.nx * first.ny;
        let mut data = Vec::with_capacity(trajs.len() * first.data.len());
        for t in trajs {
            for (i, &v) in t.data.iter().enumerate() {
                let f = (i / plane) % FIELDS.len();
                data.push(((v - norm.mean[f]) / norm.std[f]) as f32);
            }
        }
        let shape =
            DatasetShape { n_traj: trajs.len(), n_steps: first.n_steps, n_fields: FIELDS.len(), ny: first.ny, nx: first.nx };
        Dataset::new(shape, first.dt_save, burn_in, norm, trajs.iter().map(|t| t.forcing).collect(), data)
    }

    pub fn shape(&self) -> DatasetShape {
        self.shape
    }

    pub fn dt_save(&self) -> f64 {
        self.dt_save
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn params(&self, traj: usize) -> &[f64] {
        &self.params[traj * self.param_dim..(traj + 1) * self.param_dim]
    }

    /// Forcing amplitude of a trajectory (its first parameter).
    pub fn forcing(&self, traj: usize) -> f64 {
        self.params(traj).first().copied().unwrap_or(0.0)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// All fields of one snapshot, `[n_fields][ny][nx]`.
    pub fn frame(&self, traj: usize, step: usize) -> &[f32] {
        let len = self.shape.frame_len();
        let start = (traj * self.shape.n_steps + step) * len;
        &self.data[start..start + len]
    }

    /// Trajectories in `range`, sharing this dataset's statistics.
    pub fn select(&self, range: Range<usize>) -> Result<Dataset> {
        if range.is_empty() || range.end > self.shape.n_traj {
            return Err(dim_err!("trajectory range {range:?} is outside 0..{}", self.shape.n_traj));
        }
        let per = self.shape.n_steps * self.shape.frame_len();
        let shape = DatasetShape { n_traj: range.len(), ..self.shape };
        Dataset::new(
            shape,
            self.dt_save,
            self.burn_in,
            self.norm.clone(),
            self.params[range.start * self.param_dim..range.end * self.param_dim].to_vec(),
            self.data[range.start * per..range.end * per].to_vec(),
        )
    }

    /// Holds out the last `fraction` of trajectories (at least one) for validation.
    pub fn split(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        let n = self.shape.n_traj;
        let held = ((n as f64 * fraction).round() as usize).max(1);
        if held >= n {
            return Err(config_err!("cannot hold out {held} of {n} trajectories and still train"));
        }
        Ok((self.select(0..n - held)?, self.select(n - held..n)?))
    }

    /// The same snapshots expressed under other statistics.
    pub fn renormalized(&self, norm: &Normalization) -> Result<Dataset> {
        if norm.mean.len() != self.shape.n_fields {
            return Err(dim_err!("normalization has {} fields, data has {}", norm.mean.len(), self.shape.n_fields));
        }
        let plane = self.shape.ny * self.shape.nx;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = (i / plane) % self.shape.n_fields;
                let raw = v as f64 * self.norm.std[f] + self.norm.mean[f];
                ((raw - norm.mean[f]) / norm.std[f]) as f32
            })
            .collect();
        Dataset::new(self.shape, self.dt_save, self.burn_in, norm.clone(), self.params.clone(), data)
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let s = ds.shape;
    let mut out = Vec::with_capacity(48 + 16 * s.n_fields + 8 * ds.params.len() + 4 * ds.data.len());
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION as usize, s.n_traj, s.n_steps, s.n_fields, s.ny, s.nx] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.dt_save.to_le_bytes());
    out.extend_from_slice(&(ds.burn_in as u32).to_le_bytes());
    out.extend_from_slice(&(ds.param_dim as u32).to_le_bytes());
    for v in ds.norm.mean.iter().chain(&ds.norm.std).chain(&ds.params) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &ds.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format { offset: at as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, format!("file ends inside {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.fail(self.pos, "size overflow"))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != DATASET_MAGIC {
        return Err(c.fail(0, "not a dataset file (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != DATASET_VERSION as usize {
        return Err(c.fail(4, format!("unsupported dataset version {version}")));
    }
    let shape = DatasetShape {
        n_traj: c.u32("n_traj")?,
        n_steps: c.u32("n_steps")?,
        n_fields: c.u32("n_fields")?,
        ny: c.u32("ny")?,
        nx: c.u32("nx")?,
    };
    let dt_save = f64::from_le_bytes(c.take(8, "dt_save")?.try_into().unwrap());
    let burn_in = c.u32("burn_in")?;
    let param_dim = c.u32("param_dim")?;
    let header_end = c.pos;
    let numel = shape.numel().filter(|&n| n > 0).ok_or_else(|| c.fail(8, format!("invalid extents {shape:?}")))?;
    let mean = c.f64s(shape.n_fields, "mean")?;
    let std = c.f64s(shape.n_fields, "std")?;
    let n_params = shape.n_traj.checked_mul(param_dim).ok_or_else(|| c.fail(header_end - 4, "size overflow"))?;
    let params = c.f64s(n_params, "params")?;
    let raw = c.take(numel.checked_mul(4).ok_or_else(|| c.fail(8, "size overflow"))?, "data")?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if c.pos != bytes.len() {
        return Err(c.fail(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let mut ds = Dataset::new(shape, dt_save, burn_in, Normalization { mean, std }, params, data)?;
    ds.param_dim = param_dim;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
