use super::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{Binder, Parameterized};
use crate::tensor::{RngState, Tape, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// RNG stream used to draw minibatches.
pub const BATCH_STREAM: u64 = 1;
/// RNG stream used for the model's Monte Carlo draws during training.
pub const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.005, batch_size: 512, iterations: 20_000, seed: 0 }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig { iterations: 10_000, ..Self::default() }
    }

    /// Checks the config against a training set of `n` points and returns the
    /// batch size actually used. Oversized batches shrink to `n`.
    pub fn effective_batch(&self, n: usize) -> Result<usize> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        if self.batch_size > n {
            log::warn!("batch size {} exceeds the {n} training points; using {n}", self.batch_size);
        }
        Ok(self.batch_size.min(n))
    }
}

/// Adam with per-name moment buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Starts a new step. Call once before the `update`s of that step.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Descends `param` along the loss gradient `grad`.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) {
        assert!(self.step > 0, "Adam::tick must precede update");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(grad.rows(), grad.cols()), Tensor::zeros(grad.rows(), grad.cols())));
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let p = param.as_mut_slice();
        let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
        for (i, g) in grad.as_slice().iter().enumerate() {
            ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * g;
            vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * g * g;
            p[i] -= self.lr * (ms[i] / c1) / ((vs[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Epoch shuffling without replacement. A partial tail batch is dropped and
/// the next epoch starts from a fresh permutation, so every batch has the
/// same size.
#[derive(Clone, Debug)]
pub struct EpochBatcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: RngState,
}

impl EpochBatcher {
    pub fn new(n: usize, batch: usize, rng: RngState) -> Self {
        assert!(batch >= 1 && batch <= n);
        let mut b = EpochBatcher { order: (0..n).collect(), pos: n, batch, rng };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_indices(&mut self) -> &[usize] {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let out = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
    pub wall_ms: f64,
}

pub fn snapshot<M: Parameterized + ?Sized>(model: &M) -> Vec<Tensor> {
    let mut out = Vec::new();
    model.visit(&mut |_, t| out.push(t.clone()));
    out
}

pub fn restore<M: Parameterized + ?Sized>(model: &mut M, snap: &[Tensor]) {
    let mut i = 0;
    model.visit_mut(&mut |_, t| {
        *t = snap[i].clone();
        i += 1;
    });
}

/// Maximizes the stochastic ELBO with Adam.
///
/// `callback` sees every trace row and may return `false` to stop early. On
/// a non-finite loss or gradient the parameters are rolled back to the last
/// finite evaluation and [`Error::NonFiniteLoss`] is returned.
pub fn adam_train<M: Model + ?Sized>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
    callback: &mut dyn FnMut(&TraceRow) -> bool,
) -> Result<Vec<TraceRow>> {
    let n = data.len();
    let batch = cfg.effective_batch(n)?;
    let full = data.batch();
    let mut batcher = EpochBatcher::new(n, batch, RngState::for_stream(cfg.seed, BATCH_STREAM));
    let mut noise_rng = RngState::for_stream(cfg.seed, NOISE_STREAM);
    let mut adam = Adam::new(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();

    for it in 0..cfg.iterations {
        let mb = if batch == n { full.clone() } else { full.select(batcher.next_indices()) };
        let before = snapshot(model);
        let tape = Tape::new();
        let binder = Binder::new(&tape);
        let elbo = model.elbo(&binder, &mb, n, &mut noise_rng);
        let elbo = match elbo {
            Ok(v) => v,
            // A failed factorization at this point means the parameters have diverged.
            Err(Error::NotPositiveDefinite { .. }) => return Err(Error::NonFiniteLoss { iteration: it }),
            Err(e) => return Err(e),
        };
        let value = elbo.item();
        let bound = binder.bound();
        let grads = tape.grad(elbo, &bound.iter().map(|(_, v)| *v).collect::<Vec<_>>())?;
        if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            log::error!("non-finite ELBO at iteration {it}; keeping the last finite parameters");
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let by_name: HashMap<&str, &Tensor> = bound.iter().map(|(k, _)| k.as_str()).zip(grads.iter()).collect();
        adam.tick();
        model.visit_mut(&mut |name, t| {
            if let Some(g) = by_name.get(name) {
                // Ascend the ELBO by descending its negation.
                adam.update(name, t, &g.scale(-1.0));
            }
        });
        // Never leave the model with parameters that were not evaluated.
        if snapshot(model).iter().any(|t| !t.is_finite()) {
            restore(model, &before);
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let row = TraceRow { iteration: it, elbo: value, wall_ms: start.elapsed().as_secs_f64() * 1e3 };
        trace.push(row);
        if !callback(&row) {
            break;
        }
    }
    Ok(trace)
}

/// Writes `(iteration, elbo)` to `trace_path` and `(iteration, wall_ms)` to
/// `timing_path`. Timing lives apart so the trace is reproducible byte for
/// byte.
pub fn write_trace(trace: &[TraceRow], trace_path: &Path, timing_path: Option<&Path>, config_hash: &str) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(trace_path)?);
    writeln!(w, "# config_hash: {config_hash}")?;
    writeln!(w, "iteration,elbo")?;
    for r in trace {
        writeln!(w, "{},{:e}", r.iteration, r.elbo)?;
    }
    w.flush()?;
    if let Some(p) = timing_path {
        let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
        writeln!(w, "# config_hash: {config_hash}")?;
        writeln!(w, "iteration,wall_ms")?;
        for r in trace {
            writeln!(w, "{},{:.3}", r.iteration, r.wall_ms)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Trailing moving average with window `k`, one value per full window.
pub fn moving_average(values: &[f64], k: usize) -> Vec<f64> {
    if k == 0 || values.len() < k {
        return vec![];
    }
    let mut out = Vec::with_capacity(values.len() - k + 1);
    let mut acc: f64 = values[..k].iter().sum();
    out.push(acc / k as f64);
    for i in k..values.len() {
        acc += values[i] - values[i - k];
        out.push(acc / k as f64);
    }
    out
}
