//! Parameter, runtime and memory accounting for a model at a fixed batch.
//!
//! Times are wall-clock means after a warmup. They depend on the machine and
//! are reported, never compared against fixed numbers.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conditioning::{Conditioning, ConditioningContext};
use crate::error::{config_err, usage_err, Result};
use crate::models::{Model, ModelSpec};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub batch: usize,
    pub iters: usize,
    pub warmup: usize,
    /// Input grid `(ny, nx)`.
    pub grid: (usize, usize),
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { batch: 8, iters: 100, warmup: 10, grid: (64, 64) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub model: String,
    pub params: usize,
    /// Mean forward time in microseconds.
    pub fwd_us: f64,
    /// Mean forward plus backward time in microseconds.
    pub fwd_bwd_us: f64,
    /// Parameter memory at 4 bytes each, in units of 10⁶ bytes.
    pub mem_mb: f64,
    pub warmup: usize,
    pub iters: usize,
}

pub const BENCH_HEADER: &str = "model,params,fwd_us,fwd_bwd_us,mem_mb";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.3},{:.3},{:.3}", self.model, self.params, self.fwd_us, self.fwd_bwd_us, self.mem_mb)
    }
}

/// Parameter memory of `params` single-precision values in MB.
pub fn param_memory_mb(params: usize) -> f64 {
    (4 * params) as f64 / 1e6
}

/// Benchmarks share the one process with nothing else, so parallel
/// workers are refused rather than silently ignored.
pub fn check_workers(workers: usize) -> Result<()> {
    if workers > 1 {
        return Err(usage_err!("benchmarks run serially; got --workers {workers}"));
    }
    Ok(())
}

/// Label like `fno128_m8`, `unet_mod64`.
pub fn model_label(spec: &ModelSpec) -> String {
    let mut s = format!("{}{}", spec.family.name(), spec.hidden_channels);
    if spec.family == crate::models::Family::Fno {
        let _ = write!(s, "_m{}", spec.fno_modes[0]);
    }
    if spec.conditioning != Conditioning::None {
        let _ = write!(s, "_{:?}", spec.conditioning);
        s = s.to_lowercase();
    }
    s
}

pub fn bench_model(spec: &ModelSpec, cfg: &BenchConfig) -> Result<BenchRecord> {
    if cfg.batch == 0 || cfg.iters == 0 {
        return Err(config_err!("benchmark needs batch ≥ 1 and iters ≥ 1"));
    }
    let model = Model::<f32>::build(spec)?;
    let (ny, nx) = cfg.grid;
    // A fixed smooth input: the values do not affect the cost.
    let x = Tensor::<f32>::from_fn(&[cfg.batch, spec.input_channels(), ny, nx], |i| ((i % 97) as f32 * 0.05).sin());
    let ctx = ConditioningContext::repeat(0.25, 0.5, cfg.batch);
    let ctx = (spec.conditioning != Conditioning::None).then_some(&ctx);

    let forward = || -> Result<()> {
        let graph = Graph::new();
        let params = model.attach(&graph, false);
        model.forward(&graph, &params, graph.constant(x.clone()), ctx)?;
        Ok(())
    };
    let forward_backward = || -> Result<()> {
        let graph = Graph::new();
        let params = model.attach(&graph, true);
        let y = model.forward(&graph, &params, graph.constant(x.clone()), ctx)?;
        graph.backward(y.mul(y)?.sum())?;
        Ok(())
    };
    let fwd_us = time(cfg, forward)?;
    let fwd_bwd_us = time(cfg, forward_backward)?;
    let params = model.parameter_count();
    Ok(BenchRecord {
        model: model_label(spec),
        params,
        fwd_us,
        fwd_bwd_us,
        mem_mb: param_memory_mb(params),
        warmup: cfg.warmup,
        iters: cfg.iters,
    })
}

fn time(cfg: &BenchConfig, f: impl Fn() -> Result<()>) -> Result<f64> {
    for _ in 0..cfg.warmup {
        f()?;
    }
    let start = Instant::now();
    for _ in 0..cfg.iters {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e6 / cfg.iters as f64)
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_bench_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    std::fs::write(path, bench_csv(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn fno128_memory_column() {
        let spec = ModelSpec { fno_modes: [8, 8], layers: 8, ..ModelSpec::new(Family::Fno, 128) };
        let mb = param_memory_mb(spec.parameter_count().unwrap());
        assert!((mb / 134.0 - 1.0).abs() < 0.02, "{mb} MB");
    }

    #[test]
    fn single_iteration_record_is_well_formed() {
        let spec = ModelSpec { fno_modes: [4, 4], layers: 2, ..ModelSpec::new(Family::Fno, 8) };
        let cfg = BenchConfig { batch: 2, iters: 1, warmup: 0, grid: (16, 16) };
        let r = bench_model(&spec, &cfg).unwrap();
        assert_eq!(r.model, "fno8_m4");
        assert_eq!(r.mem_mb, param_memory_mb(r.params));
        assert_eq!(r.params, spec.parameter_count().unwrap());
        assert!(r.fwd_us > 0.0 && r.fwd_bwd_us > 0.0);
        assert_eq!((r.iters, r.warmup), (1, 0));
        assert_eq!(r.csv_row().split(',').count(), 5);
    }

    #[test]
    fn conditioned_unet_runs() {
        let spec = ModelSpec {
            channel_multipliers: Some(vec![1, 2]),
            blocks_per_level: 1,
            conditioning: Conditioning::Adagn,
            ..ModelSpec::new(Family::UnetMod, 4)
        };
        let r = bench_model(&spec, &BenchConfig { batch: 1, iters: 1, warmup: 1, grid: (8, 8) }).unwrap();
        assert_eq!(r.model, "unet_mod4_adagn");
    }

    #[test]
    fn doubling_resnet_width_quadruples_parameters() {
        let count = |c| ModelSpec::new(Family::Resnet, c).parameter_count().unwrap() as f64;
        let ratio = count(128) / count(64);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn csv_header_and_workers() {
        let csv = bench_csv(&[]);
        assert_eq!(csv, "model,params,fwd_us,fwd_bwd_us,mem_mb\n");
        assert!(check_workers(1).is_ok());
        assert!(matches!(check_workers(2), Err(crate::Error::Usage(_))));
        assert!(bench_model(&ModelSpec::new(Family::Resnet, 4), &BenchConfig { iters: 0, ..Default::default() }).is_err());
    }
}
