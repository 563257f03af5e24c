//! Sparse variational GP building blocks.
//!
//! An [`InducingBlock`] holds inducing inputs `Z` and the variational
//! distribution `q(u) = N(m, S)`, with `S = L_S L_Sᵀ` and `L_S` stored as a
//! raw lower triangle whose diagonal is a logarithm. The block is also where
//! a constant prior mean lives (used by the log-GP of the heteroscedastic
//! model, zero elsewhere).
//!
//! Blocks start unwhitened: `mean` and `s_raw` describe `u` itself. A
//! whitened block stores `q(v) = N(m_v, L_v L_vᵀ)` with `u = μ₀ + L v` and
//! `L = chol(K_MM)`. Both describe the same family; the whitened form keeps
//! the KL well conditioned when `K_MM` is nearly singular, which is what the
//! training pipeline uses.

use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::kernels::{KernelVars, SeArdKernel};
use crate::model::{Batch, Model, ModelKind};
use crate::params::{join, Binder, Parameterized};
use crate::tensor::{cholesky, RngState, Tape, Tensor, Var, DEFAULT_JITTER};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Lower bound applied to marginal variances computed from the block.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct InducingBlock {
    /// `M x d` inducing inputs.
    pub z: Tensor,
    /// `M x 1` variational mean.
    pub mean: Tensor,
    /// `M x M` raw factor: strict lower triangle as is, diagonal as logs.
    pub s_raw: Tensor,
    pub kernel: SeArdKernel,
    /// `1 x 1` constant prior mean of `u`.
    pub prior_mean: Tensor,
    /// Whether `prior_mean` is a trainable parameter.
    pub learn_prior_mean: bool,
    pub jitter: f64,
    /// Whether `mean` and `s_raw` describe the whitened variable `v`.
    pub whitened: bool,
}

impl InducingBlock {
    /// Block with `m = 0` and `L_S = 0.1 · chol(K_MM)`.
    pub fn new(z: Tensor, kernel: SeArdKernel) -> Result<Self> {
        let m = z.rows();
        if m == 0 {
            return Err(Error::InvalidConfig("an inducing block needs at least one point".into()));
        }
        let kmm = kernel.gram(&z, &z)?;
        let l = cholesky(&kmm, DEFAULT_JITTER)?.into_l();
        let mut block = InducingBlock {
            z,
            mean: Tensor::zeros(m, 1),
            s_raw: Tensor::zeros(m, m),
            kernel,
            prior_mean: Tensor::scalar(0.0),
            learn_prior_mean: false,
            jitter: DEFAULT_JITTER,
            whitened: false,
        };
        block.set_factor(&l.scale(0.1));
        Ok(block)
    }

    /// Block with explicit variational moments.
    pub fn with_moments(z: Tensor, kernel: SeArdKernel, mean: Tensor, cov: &Tensor) -> Result<Self> {
        let mut block = InducingBlock::new(z, kernel)?;
        if mean.shape() != [block.num_inducing(), 1] {
            return Err(Error::DimensionMismatch(format!(
                "variational mean of shape {:?} for {} inducing points",
                mean.shape(),
                block.num_inducing()
            )));
        }
        block.mean = mean;
        block.set_covariance(cov)?;
        Ok(block)
    }

    pub fn with_prior_mean(mut self, value: f64, learn: bool) -> Self {
        self.prior_mean = Tensor::scalar(value);
        self.learn_prior_mean = learn;
        self
    }

    pub fn num_inducing(&self) -> usize {
        self.z.rows()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    /// The stored lower-triangular factor: `L_S`, or `L_v` when whitened.
    pub fn s_factor(&self) -> Tensor {
        let r = &self.s_raw;
        Tensor::from_fn(r.rows(), r.cols(), |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => r.get(i, j),
            std::cmp::Ordering::Equal => r.get(i, j).exp(),
            std::cmp::Ordering::Less => 0.0,
        })
    }

    fn kmm_factor(&self) -> Result<Tensor> {
        Ok(cholesky(&self.kernel.gram(&self.z, &self.z)?, self.jitter)?.into_l())
    }

    /// Unwhitened variational mean `m`.
    pub fn u_mean(&self) -> Result<Tensor> {
        if !self.whitened {
            return Ok(self.mean.clone());
        }
        let mu0 = self.prior_mean.item();
        Ok(self.kmm_factor()?.matmul(&self.mean).map(|v| v + mu0))
    }

    /// Unwhitened variational covariance `S`.
    pub fn covariance(&self) -> Result<Tensor> {
        let mut l = self.s_factor();
        if self.whitened {
            l = self.kmm_factor()?.matmul(&l);
        }
        Ok(Tensor::matmul_t(&l, false, &l, true))
    }

    /// Re-express the block in whitened form without changing `q(u)`.
    pub fn whitened(mut self) -> Result<Self> {
        if self.whitened {
            return Ok(self);
        }
        let l = self.kmm_factor()?;
        let mu0 = self.prior_mean.item();
        let v = crate::tensor::solve_lower(&l, &self.mean.map(|m| m - mu0));
        let lv = crate::tensor::solve_lower(&l, &self.s_factor());
        self.mean = v;
        self.set_factor(&lv);
        self.whitened = true;
        Ok(self)
    }

    /// Set the stored factor directly. The diagonal must be positive.
    pub fn set_factor(&mut self, l: &Tensor) {
        self.s_raw = Tensor::from_fn(l.rows(), l.cols(), |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => l.get(i, j),
            std::cmp::Ordering::Equal => l.get(i, j).ln(),
            std::cmp::Ordering::Less => 0.0,
        });
    }

    pub fn set_covariance(&mut self, cov: &Tensor) -> Result<()> {
        if cov.shape() != [self.num_inducing(); 2] {
            return Err(Error::DimensionMismatch("covariance does not match block size".into()));
        }
        let mut l = cholesky(cov, 0.0)?.into_l();
        if self.whitened {
            l = crate::tensor::solve_lower(&self.kmm_factor()?, &l);
        }
        self.set_factor(&l);
        Ok(())
    }

    pub fn bind<'t>(&self, binder: &Binder<'t>, prefix: &str) -> BlockVars<'t> {
        let z = binder.param(&join(prefix, "z"), &self.z);
        let mean = binder.param(&join(prefix, "mean"), &self.mean);
        let s_raw = binder.param(&join(prefix, "s_raw"), &self.s_raw);
        let kernel = self.kernel.bind(binder, &join(prefix, "kernel"));
        let prior_mean = if self.learn_prior_mean {
            binder.param(&join(prefix, "prior_mean"), &self.prior_mean)
        } else {
            binder.tape().constant(self.prior_mean.clone())
        };
        BlockVars { z, mean, s_raw, kernel, prior_mean, jitter: self.jitter, whitened: self.whitened }
    }

    pub fn visit_prefixed(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "z"), &self.z);
        f(&join(prefix, "mean"), &self.mean);
        f(&join(prefix, "s_raw"), &self.s_raw);
        self.kernel.visit_prefixed(&join(prefix, "kernel"), f);
        if self.learn_prior_mean {
            f(&join(prefix, "prior_mean"), &self.prior_mean);
        }
    }

    pub fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "z"), &mut self.z);
        f(&join(prefix, "mean"), &mut self.mean);
        f(&join(prefix, "s_raw"), &mut self.s_raw);
        self.kernel.visit_prefixed_mut(&join(prefix, "kernel"), f);
        if self.learn_prior_mean {
            f(&join(prefix, "prior_mean"), &mut self.prior_mean);
        }
    }

    /// Moments of `q(f)` at `x`.
    pub fn marginals(&self, x: &Tensor, want_full: bool) -> Result<GaussianMarginals> {
        self.kernel.gram(x, &self.z)?;
        let tape = Tape::new();
        let prepared = self.bind(&Binder::constant(&tape), "").prepare()?;
        let xv = tape.constant(x.clone());
        let mv = prepared.marginals(xv);
        let covariance = if want_full { Some(prepared.covariance(xv).value()) } else { None };
        Ok(GaussianMarginals { mean: mv.mean.value(), variance: mv.variance.value(), covariance })
    }

    /// `KL(q(u) ‖ p(u))`.
    pub fn kl_to_prior(&self) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.bind(&Binder::constant(&tape), "").prepare()?.kl().item())
    }
}

/// An [`InducingBlock`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars<'t> {
    pub z: Var<'t>,
    pub mean: Var<'t>,
    pub s_raw: Var<'t>,
    pub kernel: KernelVars<'t>,
    pub prior_mean: Var<'t>,
    pub jitter: f64,
    pub whitened: bool,
}

impl<'t> BlockVars<'t> {
    /// Factorize `K_MM` once so that marginals and KL can share it.
    pub fn prepare(&self) -> Result<PreparedBlock<'t>> {
        let kmm = self.kernel.gram(self.z, self.z);
        let l = kmm.cholesky(self.jitter)?;
        let ls = self.s_raw.tril_exp_diag();
        let alpha = if self.whitened { self.mean } else { l.solve_lower(self.mean - self.prior_mean) };
        Ok(PreparedBlock { vars: *self, l, ls, alpha })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PreparedBlock<'t> {
    pub vars: BlockVars<'t>,
    /// Cholesky factor of `K_MM + jitter·I`.
    pub l: Var<'t>,
    /// The stored factor, `L_S` or `L_v`.
    pub ls: Var<'t>,
    /// `L⁻¹ (m - μ₀)`.
    pub alpha: Var<'t>,
}

/// Marginal moments on a tape, both `n x 1`.
#[derive(Clone, Copy, Debug)]
pub struct MarginalVars<'t> {
    pub mean: Var<'t>,
    pub variance: Var<'t>,
}

impl<'t> PreparedBlock<'t> {
    fn projections(&self, x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let kmn = self.vars.kernel.gram(self.vars.z, x);
        let a = self.l.solve_lower(kmn);
        let b = if self.vars.whitened {
            self.ls.matmul_t(true, a, false)
        } else {
            self.ls.matmul_t(true, self.l.solve_upper_t(a), false)
        };
        (a, b)
    }

    pub fn marginals(&self, x: Var<'t>) -> MarginalVars<'t> {
        let (a, b) = self.projections(x);
        let mean = a.matmul_t(true, self.alpha, false) + self.vars.prior_mean;
        let reduction = (b.square().sum_rows() - a.square().sum_rows()).t();
        let variance = (reduction + self.vars.kernel.variance()).clamp_min(VARIANCE_FLOOR);
        MarginalVars { mean, variance }
    }

    /// Full `n x n` posterior covariance at `x`.
    pub fn covariance(&self, x: Var<'t>) -> Var<'t> {
        let (a, b) = self.projections(x);
        let knn = self.vars.kernel.gram(x, x);
        knn - a.matmul_t(true, a, false) + b.matmul_t(true, b, false)
    }

    pub fn kl(&self) -> Var<'t> {
        let m = self.vars.mean.rows() as f64;
        let maha = self.alpha.square().sum();
        let logdet_s = self.vars.s_raw.diag().sum().scale(2.0);
        if self.vars.whitened {
            return (self.ls.square().sum() + maha - logdet_s - m).scale(0.5);
        }
        let trace = self.l.solve_lower(self.ls).square().sum();
        let logdet_k = self.l.diag().ln().sum().scale(2.0);
        (trace + maha + logdet_k - logdet_s - m).scale(0.5)
    }
}

/// Per-point `E_{N(f|μ,v)}[log N(y|f, ν)]` as an `n x 1` column.
pub fn gaussian_expected_loglik<'t>(y: Var<'t>, mean: Var<'t>, variance: Var<'t>, noise: Var<'t>) -> Var<'t> {
    let resid = (y - mean).square() + variance;
    (noise.ln() + LN_2PI).scale(-0.5) - resid / noise.scale(2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMarginals {
    pub mean: Tensor,
    pub variance: Tensor,
    pub covariance: Option<Tensor>,
}

/// Gaussian observation noise, stored as a log variance plus a fixed floor.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseParam {
    pub log_variance: Tensor,
    pub floor: f64,
}

impl NoiseParam {
    pub fn new(variance: f64) -> Self {
        assert!(variance > 0.0, "noise variance must be positive");
        NoiseParam { log_variance: Tensor::scalar(variance.ln()), floor: 0.0 }
    }

    /// Keep the effective variance at least `floor` by adding it.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.item().exp() + self.floor
    }

    pub fn bind<'t>(&self, binder: &Binder<'t>, name: &str) -> Var<'t> {
        let raw = binder.param(name, &self.log_variance).exp();
        if self.floor > 0.0 {
            raw + self.floor
        } else {
            raw
        }
    }
}

/// The uniform scaling `N / |B|` applied to minibatch likelihood sums.
pub fn batch_scale(n_total: usize, batch_len: usize) -> Result<f64> {
    if batch_len == 0 {
        return Err(Error::InvalidConfig("empty minibatch".into()));
    }
    if n_total < batch_len {
        return Err(Error::InvalidConfig(format!("N = {n_total} is smaller than the batch size {batch_len}")));
    }
    Ok(n_total as f64 / batch_len as f64)
}

/// Scaled expected log-likelihood of a Gaussian likelihood, without KL.
pub fn svgp_expected_loglik<'t>(
    prepared: &PreparedBlock<'t>,
    noise: Var<'t>,
    x: Var<'t>,
    y: Var<'t>,
    n_total: usize,
) -> Result<Var<'t>> {
    let scale = batch_scale(n_total, x.rows())?;
    let mv = prepared.marginals(x);
    Ok(gaussian_expected_loglik(y, mv.mean, mv.variance, noise).sum().scale(scale))
}

pub fn svgp_elbo<'t>(block: &BlockVars<'t>, noise: Var<'t>, x: Var<'t>, y: Var<'t>, n_total: usize) -> Result<Var<'t>> {
    let prepared = block.prepare()?;
    Ok(svgp_expected_loglik(&prepared, noise, x, y, n_total)? - prepared.kl())
}

/// Predictive marginals of `y*`, i.e. the latent marginals plus noise.
pub fn svgp_predict(block: &InducingBlock, noise: &NoiseParam, x: &Tensor) -> Result<GaussianMarginals> {
    let mut g = block.marginals(x, false)?;
    let nv = noise.variance();
    g.variance = g.variance.map(|v| v + nv);
    Ok(g)
}

/// Plain sparse variational GP regression, the baseline model.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgpModel {
    pub block: InducingBlock,
    pub noise: NoiseParam,
}

impl SvgpModel {
    pub fn new(z: Tensor, noise_variance: f64) -> Result<Self> {
        let d = z.cols();
        Ok(SvgpModel { block: InducingBlock::new(z, SeArdKernel::new(d))?, noise: NoiseParam::new(noise_variance) })
    }
}

impl Parameterized for SvgpModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.block.visit_prefixed("f", f);
        f("noise.log_variance", &self.noise.log_variance);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.block.visit_prefixed_mut("f", f);
        f("noise.log_variance", &mut self.noise.log_variance);
    }
}

impl Model for SvgpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Svgp
    }

    fn input_dim(&self) -> usize {
        self.block.dim()
    }

    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, _rng: &mut RngState) -> Result<Var<'t>> {
        let tape = binder.tape();
        let block = self.block.bind(binder, "f");
        let noise = self.noise.bind(binder, "noise.log_variance");
        svgp_elbo(&block, noise, tape.constant(batch.x.clone()), tape.constant(batch.y.clone()), n_total)
    }

    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet> {
        let g = svgp_predict(&self.block, &self.noise, x)?;
        let nv = self.noise.variance();
        let mut ys = Tensor::zeros(x.rows(), samples_per_point);
        let mut fs = Tensor::zeros(x.rows(), samples_per_point);
        for i in 0..x.rows() {
            let mu = g.mean.get(i, 0);
            let sd_f = (g.variance.get(i, 0) - nv).max(0.0).sqrt();
            for s in 0..samples_per_point {
                let f = mu + sd_f * rng.normal();
                fs.set(i, s, f);
                ys.set(i, s, f + nv.sqrt() * rng.normal());
            }
        }
        PredictiveSampleSet::new(ys, Some(fs), ModelKind::Svgp)
    }
}
