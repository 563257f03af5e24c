//! Scoring of predictive samples.

mod kde;
mod plotdata;
mod report;

pub use kde::{kde_nll, silverman_bandwidth, Bandwidth, KdeNll};
pub use plotdata::{emit_plotdata, read_plot_csv, PlotFiles};
pub use report::{run_summary, write_nll_report, NllRow, RunSummary};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleUnits {
    Standardized,
    Original,
}

/// Draws from `p(y* | y)`, one row per test point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSampleSet {
    /// `N* x S` output samples.
    pub samples: Tensor,
    /// Optional `N* x S` latent function samples.
    pub f_samples: Option<Tensor>,
    pub model: ModelKind,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    units: SampleUnits,
}

impl PredictiveSampleSet {
    pub fn new(samples: Tensor, f_samples: Option<Tensor>, model: ModelKind) -> Result<Self> {
        if samples.cols() == 0 {
            return Err(Error::InvalidConfig("at least one sample per point is required".into()));
        }
        if let Some(f) = &f_samples {
            if f.shape() != samples.shape() {
                return Err(Error::DimensionMismatch("f samples do not match y samples".into()));
            }
        }
        if !samples.is_finite() {
            return Err(Error::InvalidConfig("predictive samples contain non-finite values".into()));
        }
        Ok(PredictiveSampleSet { samples, f_samples, model, seed: None, config_hash: None, units: SampleUnits::Standardized })
    }

    pub fn with_provenance(mut self, seed: u64, config_hash: impl Into<String>) -> Self {
        self.seed = Some(seed);
        self.config_hash = Some(config_hash.into());
        self
    }

    pub fn num_points(&self) -> usize {
        self.samples.rows()
    }

    pub fn samples_per_point(&self) -> usize {
        self.samples.cols()
    }

    pub fn units(&self) -> SampleUnits {
        self.units
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.samples.row_slice(i)
    }

    /// Map samples back to original units, `y = mean + std · y_std`.
    /// Refuses to run twice.
    pub fn destandardize(&mut self, mean: f64, std: f64) -> Result<()> {
        if self.units == SampleUnits::Original {
            return Err(Error::InvalidConfig("samples are already in original units".into()));
        }
        self.samples = self.samples.map(|v| mean + std * v);
        if let Some(f) = &self.f_samples {
            self.f_samples = Some(f.map(|v| mean + std * v));
        }
        self.units = SampleUnits::Original;
        Ok(())
    }
}
