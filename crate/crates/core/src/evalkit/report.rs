use crate::error::Result;
use serde::Serialize;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub mean: f64,
    /// Sample standard deviation, zero for a single run.
    pub std: f64,
    pub runs: usize,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

pub fn run_summary(values: &[f64]) -> RunSummary {
    assert!(!values.is_empty(), "run_summary needs at least one run");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    RunSummary { mean, std, runs: values.len() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NllRow {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub mean_nll: f64,
    pub units: String,
    pub config_hash: String,
}

pub fn write_nll_report(path: &Path, rows: &[NllRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
