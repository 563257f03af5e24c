//! Fixtures shared by the benchmarks.

use modgp::pipeline::adam_train;
use modgp::tensor::sample_std_normal;
use modgp::{AnyModel, Dataset, Result, RngState, Tensor, TrainConfig};

/// `n` points of a noisy sine on `d` standard-normal inputs.
pub fn sine_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = RngState::new(seed);
    let x = sample_std_normal(&mut rng, n, d);
    let y: Vec<f64> = (0..n).map(|i| x.row_slice(i).iter().map(|v| (2.0 * v).sin()).sum::<f64>() + 0.1 * rng.normal()).collect();
    Dataset::new(x, Tensor::column(y)).expect("valid fixture")
}

/// Runs `steps` Adam iterations on a copy of `model`.
pub fn run_steps(model: &AnyModel, data: &Dataset, batch_size: usize, steps: usize) -> Result<AnyModel> {
    let mut m = model.clone();
    let cfg = TrainConfig { batch_size, iterations: steps, ..TrainConfig::default() };
    adam_train(&mut m, data, &cfg, &mut |_| true)?;
    Ok(m)
}
