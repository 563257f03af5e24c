//! The interface shared by every trainable model.

use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::params::{Binder, Parameterized};
use crate::tensor::{RngState, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svgp,
    Shgp,
    Smgp,
    Slgp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Svgp, ModelKind::Shgp, ModelKind::Smgp, ModelKind::Slgp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svgp => "svgp",
            ModelKind::Shgp => "shgp",
            ModelKind::Smgp => "smgp",
            ModelKind::Slgp => "slgp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind `{s}`")))
    }
}

/// A minibatch of inputs (`n x d`) and targets (`n x 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

impl Batch {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if y.cols() != 1 || x.rows() != y.rows() {
            return Err(Error::DimensionMismatch(format!(
                "batch inputs {:?} and targets {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        Ok(Batch { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch { x: self.x.select_rows(idx), y: self.y.select_rows(idx) }
    }
}

pub trait Model: Parameterized {
    fn kind(&self) -> ModelKind;

    fn input_dim(&self) -> usize;

    /// Stochastic ELBO estimate for a minibatch drawn from `n_total` points.
    /// Parameters are placed on the tape through `binder`.
    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, rng: &mut RngState) -> Result<Var<'t>>;

    fn elbo_value(&self, batch: &Batch, n_total: usize, rng: &mut RngState) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.elbo(&Binder::constant(&tape), batch, n_total, rng)?.item())
    }

    /// Samples from the predictive distribution, `samples_per_point` per row
    /// of `x`, in the units the model was trained in.
    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet>;
}
