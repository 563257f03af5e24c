//! Scalable modulated Gaussian processes.
//!
//! Three models extend the sparse variational GP by an extra latent variable:
//!
//! * [`shgp`]: heteroscedastic GP, `y = exp(w(x)) f(x) + ε(x)` with
//!   input-dependent noise, trained with a closed-form bound;
//! * [`smgp`]: mixture of GP experts with GP-distributed assignment logits,
//!   trained with a bound that marginalizes the assignments using Concrete
//!   relaxed samples;
//! * [`slgp`]: latent-input GP whose inputs are augmented with a latent `w`
//!   and warped by a stochastic encoder, trained with importance-weighted,
//!   plain variational, or hybrid bounds.
//!
//! Everything is built on a small reverse-mode [`tensor`] engine. The
//! [`pipeline`] module handles data, training and checkpoints and
//! [`evalkit`] scores predictive samples.

pub mod error;
pub mod evalkit;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod quadrature;
pub mod shgp;
pub mod slgp;
pub mod smgp;
pub mod svgp;
pub mod tensor;

pub use error::{Error, Result};
pub use evalkit::PredictiveSampleSet;
pub use kernels::SeArdKernel;
pub use model::{Batch, Model, ModelKind};
pub use params::{Binder, Parameterized};
pub use pipeline::{AnyModel, Checkpoint, Dataset, ModelConfig, TrainConfig};
pub use shgp::ShgpModel;
pub use slgp::SlgpModel;
pub use smgp::SmgpModel;
pub use svgp::{GaussianMarginals, InducingBlock, NoiseParam, SvgpModel};
pub use tensor::{CholeskyFactor, RngState, Tape, Tensor, Var};
