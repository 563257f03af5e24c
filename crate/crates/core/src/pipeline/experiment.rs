use super::build::{build_model, AnyModel, ModelConfig};
use super::data::Dataset;
use super::train::{adam_train, TrainConfig};
use crate::error::Result;
use crate::evalkit::kde_nll;
use crate::model::Model;
use crate::tensor::RngState;

/// RNG stream for predictive sampling.
pub const PREDICT_STREAM: u64 = 3;

/// Seed for split `index` of a run seeded with `seed`.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

#[derive(Clone, Debug)]
pub struct SplitResult {
    pub index: usize,
    pub seed: u64,
    pub train_len: usize,
    pub test_len: usize,
    pub mean_nll: f64,
    pub final_elbo: f64,
}

/// One 90/10 split: standardize on the training part, train, and score the
/// test part by KDE NLL in standardized units.
pub fn run_split(
    raw: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    index: usize,
    pred_samples: usize,
) -> Result<(SplitResult, AnyModel)> {
    let seed = split_seed(train_cfg.seed, index);
    let (train, test) = raw.split(0.1, seed)?;
    let (train, stats) = train.standardize()?;
    let test = test.standardize_with(&stats)?;
    let mut model = build_model(model_cfg, &train.x, seed)?;
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    let trace = adam_train(&mut model, &train, &cfg, &mut |_| true)?;
    let set = model.predict(&test.x, pred_samples, &mut RngState::for_stream(seed, PREDICT_STREAM))?;
    let nll = kde_nll(&set, &test.y.column_values(0))?;
    let result = SplitResult {
        index,
        seed,
        train_len: train.len(),
        test_len: test.len(),
        mean_nll: nll.mean,
        final_elbo: trace.last().map_or(f64::NAN, |r| r.elbo),
    };
    Ok((result, model))
}

/// Runs `splits` independent splits on up to `threads` worker threads.
/// Results come back in split order whatever the scheduling.
pub fn benchmark(
    raw: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: usize,
    pred_samples: usize,
    threads: usize,
) -> Result<Vec<SplitResult>> {
    let threads = threads.clamp(1, splits.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<Result<SplitResult>>> = (0..splits).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= splits {
                    break;
                }
                let r = run_split(raw, model_cfg, train_cfg, i, pred_samples).map(|(r, _)| r);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every split runs")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::pipeline::toy::{gen_toy, ToyCase};

    #[test]
    fn parallel_benchmark_matches_serial_runs() {
        let raw = gen_toy(ToyCase::Heteroscedastic, 80, 0).unwrap();
        let mcfg = ModelConfig { num_inducing: 5, ..ModelConfig::new(ModelKind::Svgp) };
        let tcfg = TrainConfig { lr: 0.01, batch_size: 32, iterations: 20, seed: 3 };
        let par = benchmark(&raw, &mcfg, &tcfg, 3, 20, 3).unwrap();
        let ser = benchmark(&raw, &mcfg, &tcfg, 3, 20, 1).unwrap();
        for (a, b) in par.iter().zip(&ser) {
            assert_eq!(a.mean_nll.to_bits(), b.mean_nll.to_bits());
            assert_eq!((a.train_len, a.test_len), (72, 8));
        }
        assert_ne!(par[0].seed, par[1].seed);
    }
}
