use crate::manifest::{DataSpec, Grid, Task};
use modgp::evalkit::{emit_plotdata, kde_nll, run_summary, write_nll_report, NllRow};
use modgp::pipeline::experiment::PREDICT_STREAM;
use modgp::pipeline::toy::linspace;
use modgp::pipeline::train::write_trace;
use modgp::pipeline::{adam_train, benchmark, build_model, gen_toy, load_csv, TraceRow};
use modgp::{AnyModel, Checkpoint, Dataset, Error, Model, ModelConfig, Result, RngState, Tensor, TrainConfig};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const REPORT_FILE: &str = "nll_report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Exit status for an error: 2 for numerical aborts, 1 for everything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFiniteLoss { .. } | Error::NotPositiveDefinite { .. } => 2,
        _ => 1,
    }
}

fn load(spec: &DataSpec) -> Result<Dataset> {
    load_csv(&spec.path, spec.target.as_deref(), spec.delimiter_byte()?)
}

/// Executes `task`, writing its manifest and artifacts into `out`.
pub fn execute(task: &Task, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let hash = task.config_hash()?;
    task.write(out)?;
    log::info!("{} run {hash} writing to {}", task.name(), out.display());
    match task {
        Task::GenToy { case, n, seed } => {
            let ds = gen_toy(*case, *n, *seed)?;
            let path = out.join(format!("{}.csv", case.as_str()));
            ds.write_csv(&path, Some(&hash))?;
            log::info!("wrote {} rows to {}", ds.len(), path.display());
            Ok(())
        }
        Task::Train { data, model, train } => run_train(data, model, train, out, &hash),
        Task::Predict { checkpoint, samples, seed, grid, data } => {
            run_predict(checkpoint, *samples, *seed, grid.as_ref(), data.as_ref(), out, &hash)
        }
        Task::Evaluate { checkpoint, samples, seed, data } => run_evaluate(checkpoint, *samples, *seed, data, out, &hash),
        Task::Benchmark { splits, threads, samples, betas, data, model, train } => {
            run_benchmark(data, model, train, *splits, *threads, *samples, betas, out, &hash)
        }
    }
}

fn run_train(data: &DataSpec, cfg: &ModelConfig, train: &TrainConfig, out: &Path, hash: &str) -> Result<()> {
    let (ds, stats) = load(data)?.standardize()?;
    let mut model = build_model(cfg, &ds.x, train.seed)?;
    let mut trace: Vec<TraceRow> = Vec::with_capacity(train.iterations);
    let every = (train.iterations / 20).max(1);
    let result = adam_train(&mut model, &ds, train, &mut |row| {
        trace.push(*row);
        if row.iteration % every == 0 {
            log::info!("iteration {:>6}  elbo {:.4}", row.iteration, row.elbo);
        }
        true
    });
    // On a numerical abort the model holds the last good parameters, which
    // are saved along with the partial trace before the error propagates.
    let ck = Checkpoint::capture(&model, cfg, Some(train), Some(&stats), train.seed, hash);
    ck.save(&out.join(CHECKPOINT_FILE))?;
    write_trace(&trace, &out.join(TRACE_FILE), Some(&out.join(TIMING_FILE)), hash)?;
    result.map(|t| {
        if let Some(last) = t.last() {
            log::info!("finished {} iterations, final elbo {:.4}", t.len(), last.elbo);
        }
    })
}

fn restore(path: &Path) -> Result<(Checkpoint, AnyModel)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.restore()?;
    Ok((ck, model))
}

fn mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let m = row.iter().sum::<f64>() / n;
    let v = row.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

fn run_predict(
    checkpoint: &Path,
    samples: usize,
    seed: u64,
    grid: Option<&Grid>,
    data: Option<&DataSpec>,
    out: &Path,
    hash: &str,
) -> Result<()> {
    let (ck, model) = restore(checkpoint)?;
    let x_raw = match (grid, data) {
        (Some(g), None) => {
            if ck.input_dim != 1 {
                return Err(Error::InvalidConfig(format!("--grid needs a 1-D model, this one has {} inputs", ck.input_dim)));
            }
            Tensor::column(linspace(g.lo, g.hi, g.n))
        }
        (None, Some(d)) => load(d)?.x,
        _ => return Err(Error::InvalidConfig("predict needs exactly one of a grid or a dataset".into())),
    };
    let stats = ck.standardization.clone();
    let x = stats.as_ref().map_or_else(|| x_raw.clone(), |s| s.apply_x(&x_raw));
    let mut set = model.predict(&x, samples, &mut RngState::for_stream(seed, PREDICT_STREAM))?.with_provenance(seed, hash);
    let (y_mean, y_std) = stats.as_ref().map_or((0.0, 1.0), |s| (s.y_mean, s.y_std));
    set.destandardize(y_mean, y_std)?;

    let moments: Vec<(f64, f64)> = (0..set.num_points()).map(|i| mean_std(set.point(i))).collect();
    let mut curves: Vec<(&str, Vec<f64>)> =
        vec![("sample_mean", moments.iter().map(|m| m.0).collect()), ("sample_std", moments.iter().map(|m| m.1).collect())];
    if let AnyModel::Shgp(m) = &model {
        curves.push(("noise_std", m.noise_std(&x)?.into_iter().map(|s| s * y_std).collect()));
        let w = m.w.marginals(&x, false)?;
        let band = |k: f64| -> Vec<f64> {
            w.mean.as_slice().iter().zip(w.variance.as_slice()).map(|(mu, v)| mu + k * v.sqrt()).collect()
        };
        curves.push(("w_mean", band(0.0)));
        curves.push(("w_lower", band(-2.0)));
        curves.push(("w_upper", band(2.0)));
    }
    let files = emit_plotdata(&set, &x_raw, &curves, out, "predict")?;
    log::info!("wrote {} samples to {}", set.num_points() * samples, files.y_samples.display());
    Ok(())
}

fn run_evaluate(checkpoint: &Path, samples: usize, seed: u64, data: &DataSpec, out: &Path, hash: &str) -> Result<()> {
    let (ck, model) = restore(checkpoint)?;
    let raw = load(data)?;
    let ds = match &ck.standardization {
        Some(s) => raw.standardize_with(s)?,
        None => raw,
    };
    let set = model.predict(&ds.x, samples, &mut RngState::for_stream(seed, PREDICT_STREAM))?;
    let nll = kde_nll(&set, &ds.y.column_values(0))?;
    if nll.fallback_count() > 0 {
        log::warn!("{} test points had identical samples; fallback bandwidth used", nll.fallback_count());
    }
    let row = NllRow {
        dataset: data.name(),
        model: ck.kind.to_string(),
        seed: ck.seed,
        mean_nll: nll.mean,
        units: "standardized".into(),
        config_hash: hash.into(),
    };
    write_nll_report(&out.join(REPORT_FILE), &[row])?;
    println!("{}\t{}\tmean NLL {:.4}", data.name(), ck.kind, nll.mean);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_benchmark(
    data: &DataSpec,
    cfg: &ModelConfig,
    train: &TrainConfig,
    splits: usize,
    threads: usize,
    samples: usize,
    betas: &[f64],
    out: &Path,
    hash: &str,
) -> Result<()> {
    let raw = load(data)?;
    let configs: Vec<ModelConfig> = if betas.is_empty() {
        vec![cfg.clone()]
    } else {
        betas.iter().map(|&beta| ModelConfig { beta, ..cfg.clone() }).collect()
    };
    let mut rows = Vec::new();
    let mut summary = std::fs::File::create(out.join(SUMMARY_FILE))?;
    writeln!(summary, "# config_hash: {hash}")?;
    writeln!(summary, "dataset,model,beta,runs,mean_nll,std_nll")?;
    for c in &configs {
        let label = if betas.is_empty() { c.kind.to_string() } else { format!("{}(beta={})", c.kind, c.beta) };
        log::info!("{label}: {splits} splits on {} threads", threads);
        let results = benchmark(&raw, c, train, splits, samples, threads)?;
        let nlls: Vec<f64> = results.iter().map(|r| r.mean_nll).collect();
        for r in &results {
            rows.push(NllRow {
                dataset: data.name(),
                model: label.clone(),
                seed: r.seed,
                mean_nll: r.mean_nll,
                units: "standardized".into(),
                config_hash: hash.into(),
            });
        }
        let s = run_summary(&nlls);
        writeln!(summary, "{},{},{},{},{:e},{:e}", data.name(), c.kind, c.beta, s.runs, s.mean, s.std)?;
        println!("{}\t{label}\tNLL {s}", data.name());
    }
    write_nll_report(&out.join(REPORT_FILE), &rows)
}
