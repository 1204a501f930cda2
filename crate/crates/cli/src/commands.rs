use std::path::{Path, PathBuf};

use npde::analysis::{conv_theorem_suite, filter_spectrum, write_spectra};
use npde::bench::{bench_model, check_workers, write_bench_csv};
use npde::datagen::{generate_dataset, read_dataset, write_dataset, Dataset};
use npde::models::{read_checkpoint, write_checkpoint};
use npde::training::{evaluate, write_metrics_csv, EvalMode, Trainer, ROLLOUT_STEPS};
use npde::Model;

use crate::config::{write_resolved, ExperimentConfig, Loaded};
use crate::{CliError, EvalArgs, Global, Split};

fn require_config(g: &Global, command: &str) -> Result<Loaded, CliError> {
    let path = g.config.as_ref().ok_or_else(|| CliError::Config(format!("`{command}` needs --config <path>")))?;
    Loaded::read(path)
}

/// The config if one was given; otherwise defaults rooted at the working directory.
fn optional_config(g: &Global) -> Result<Option<Loaded>, CliError> {
    g.config.as_deref().map(Loaded::read).transpose()
}

/// `flag` if given, else the config's path, else `fallback`.
fn pick(flag: Option<PathBuf>, loaded: Option<&Loaded>, from_cfg: impl Fn(&ExperimentConfig) -> &Path) -> Option<PathBuf> {
    flag.or_else(|| loaded.map(|l| l.resolve(from_cfg(&l.cfg))))
}

fn missing(what: &str) -> CliError {
    CliError::Config(format!("no {what} path: pass --{what} or --config"))
}

pub fn generate(g: &Global, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut loaded = require_config(g, "generate")?;
    if let Some(seed) = g.seed {
        loaded.cfg.data.solver.seed = seed;
    }
    let path = out.unwrap_or_else(|| loaded.resolve(&loaded.cfg.paths.dataset));
    let data = &loaded.cfg.data;
    let ds = generate_dataset(data.n_traj, data.f_range, &data.solver, g.workers.unwrap_or(0))?;
    write_dataset(&ds, &path)?;
    write_resolved(&loaded.cfg, &path)?;

    let s = ds.shape();
    let forcing: Vec<f64> = (0..s.n_traj).map(|t| ds.forcing(t)).collect();
    let norm = ds.normalization();
    println!("dataset={}", path.display());
    println!("trajectories={}", s.n_traj);
    println!("steps={}", s.n_steps);
    println!("grid={}x{}", s.ny, s.nx);
    println!("f_range={},{}", data.f_range.0, data.f_range.1);
    println!("f_sampled={},{}", forcing.iter().copied().fold(f64::INFINITY, f64::min), forcing.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    println!("norm_mean={}", join(&norm.mean));
    println!("norm_std={}", join(&norm.std));
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

pub fn train(
    g: &Global,
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut loaded = require_config(g, "train")?;
    if let Some(seed) = g.seed {
        loaded.cfg.model.seed = seed;
        loaded.cfg.train.seed = seed;
    }
    let dataset = dataset.unwrap_or_else(|| loaded.resolve(&loaded.cfg.paths.dataset));
    let checkpoint = checkpoint.unwrap_or_else(|| loaded.resolve(&loaded.cfg.paths.checkpoint));
    let metrics = metrics.unwrap_or_else(|| loaded.resolve(&loaded.cfg.paths.metrics));

    let ds = read_dataset(&dataset)?;
    let model = Model::<f32>::build(&loaded.cfg.model)?;
    let mut trainer = Trainer::new(model, &ds, &loaded.cfg.train)?;
    let mut rows = Vec::with_capacity(loaded.cfg.train.epochs);
    for epoch in 1..=loaded.cfg.train.epochs {
        let row = trainer.epoch(epoch)?;
        eprintln!(
            "epoch {epoch}/{} train_smse={:.4e} val_onestep={:.4e} val_rollout={:.4e}",
            loaded.cfg.train.epochs, row.train_smse, row.val_onestep, row.val_rollout
        );
        rows.push(row);
    }
    let mut resolved = loaded.cfg.clone();
    resolved.model = loaded.cfg.model.resolved();
    resolved.train = trainer.resolved_config().clone();
    let model = trainer.into_model();
    write_checkpoint(&model, &checkpoint)?;
    write_metrics_csv(&rows, &metrics)?;
    write_resolved(&resolved, &checkpoint)?;

    let last = rows.last().expect("at least one epoch");
    println!("checkpoint={}", checkpoint.display());
    println!("metrics={}", metrics.display());
    println!("params={}", model.parameter_count());
    println!("epochs={}", rows.len());
    println!("final_train_smse={:e}", last.train_smse);
    println!("final_val_onestep={:e}", last.val_onestep);
    println!("final_val_rollout={:e}", last.val_rollout);
    Ok(())
}

pub fn eval(g: &Global, args: &EvalArgs) -> Result<(), CliError> {
    let loaded = optional_config(g)?;
    let checkpoint = pick(args.checkpoint.clone(), loaded.as_ref(), |c| &c.paths.checkpoint).ok_or_else(|| missing("checkpoint"))?;
    let dataset = pick(args.dataset.clone(), loaded.as_ref(), |c| &c.paths.dataset).ok_or_else(|| missing("dataset"))?;
    let train_cfg = loaded.map(|l| l.cfg.train).unwrap_or_default();

    let model = read_checkpoint(&checkpoint)?;
    let ds = read_dataset(&dataset)?;
    check_compatible(&model, &ds)?;
    let ds = match args.split {
        Split::All => ds,
        // The same split the trainer validated on.
        Split::Val => ds.split(train_cfg.val_fraction)?.1,
    };
    let stride = args.stride.unwrap_or_else(|| train_cfg.strides.iter().copied().min().unwrap_or(1));

    // Compute everything before printing so a failure leaves stdout empty.
    let onestep = evaluate(&model, &ds, EvalMode::OneStep, stride)?;
    let rollout = args.rollout.then(|| evaluate(&model, &ds, EvalMode::Rollout, stride)).transpose()?;
    println!("split={}", if args.split == Split::Val { "val" } else { "all" });
    println!("trajectories={}", ds.shape().n_traj);
    println!("stride={stride}");
    println!("onestep_smse={onestep:e}");
    if let Some(r) = rollout {
        println!("rollout_steps={ROLLOUT_STEPS}");
        println!("rollout_smse={r:e}");
    }
    Ok(())
}

fn check_compatible(model: &Model<f32>, ds: &Dataset) -> Result<(), CliError> {
    let spec = model.spec();
    let s = ds.shape();
    if spec.in_fields != s.n_fields || spec.out_fields != s.n_fields {
        return Err(CliError::Config(format!(
            "checkpoint maps {} fields to {}, the dataset has {}",
            spec.in_fields, spec.out_fields, s.n_fields
        )));
    }
    let m = spec.spatial_multiple();
    if s.ny % m != 0 || s.nx % m != 0 {
        return Err(CliError::Config(format!(
            "{} checkpoint needs grid extents divisible by {m}, the dataset is {}x{}",
            spec.family.name(),
            s.ny,
            s.nx
        )));
    }
    Ok(())
}

pub fn analyze(
    g: &Global,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    grid: Option<(usize, usize)>,
    pairs: usize,
) -> Result<(), CliError> {
    let loaded = optional_config(g)?;
    let checkpoint = pick(checkpoint, loaded.as_ref(), |c| &c.paths.checkpoint).ok_or_else(|| missing("checkpoint"))?;
    let out = pick(out, loaded.as_ref(), |c| &c.paths.analysis).ok_or_else(|| missing("out"))?;
    let grid = grid.unwrap_or_else(|| loaded.as_ref().map(|l| (l.cfg.data.solver.ny, l.cfg.data.solver.nx)).unwrap_or((64, 64)));

    let model = read_checkpoint(&checkpoint)?;
    if !model.spec().family.is_unet() {
        return Err(CliError::Config(format!(
            "filter spectra need a U-Net-family checkpoint; {} is a {} model, whose spectral layers have no spatial kernels",
            checkpoint.display(),
            model.spec().family.name()
        )));
    }
    let spectra = filter_spectrum(&model, grid)?;
    let report = conv_theorem_suite(pairs, g.seed.unwrap_or(0))?;

    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let files = write_spectra(&spectra, &out)?;
    let report_path = out.join("conv_theorem.txt");
    std::fs::write(&report_path, report.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", report_path.display())))?;
    if let Some(l) = &loaded {
        let mut resolved = l.cfg.clone();
        resolved.model = model.spec().resolved();
        write_resolved(&resolved, &out)?;
    }

    for s in &spectra {
        println!("spectrum_level{}={}x{} {}", s.level, s.height, s.width, s.layer);
    }
    println!("spectrum_files={}", files.len());
    print!("{}", report.to_text());
    Ok(())
}

pub fn bench(g: &Global, out: Option<PathBuf>) -> Result<(), CliError> {
    check_workers(g.workers.unwrap_or(1))?;
    let loaded = require_config(g, "bench")?;
    let out = out.unwrap_or_else(|| loaded.resolve(&loaded.cfg.paths.bench));
    let record = bench_model(&loaded.cfg.model, &loaded.cfg.bench)?;
    write_bench_csv(std::slice::from_ref(&record), &out)?;
    let mut resolved = loaded.cfg.clone();
    resolved.model = loaded.cfg.model.resolved();
    write_resolved(&resolved, &out)?;
    println!("model={}", record.model);
    println!("params={}", record.params);
    println!("fwd_us={:.3}", record.fwd_us);
    println!("fwd_bwd_us={:.3}", record.fwd_bwd_us);
    println!("mem_mb={:.3}", record.mem_mb);
    Ok(())
}
